//! Time-domain switching detection for the bistable phase states.
//!
//! The trace is projected onto the state axis, optionally boxcar-smoothed,
//! and passed through a Schmitt trigger whose thresholds sit at
//! ±hysteresis·a around the midpoint of the two modes. Dwells shorter than
//! `min_dwell` are merged away.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::LorentzianFit;
use crate::simulate::TraceRecord;

pub const DEFAULT_HYSTERESIS: f64 = 0.5;
pub const DEFAULT_MIN_DWELL_SAMPLES: usize = 10;
pub const MIN_DWELLS: usize = 20;

/// How the two state levels are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Levels {
    /// Median split of the projection, refined by per-mode means.
    Auto,
    /// Levels at `center ± half_separation`.
    Known { center: f64, half_separation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorOptions {
    pub axis_angle: f64,
    /// Fraction of the half-separation a.
    pub hysteresis: f64,
    /// Seconds.
    pub min_dwell: f64,
    /// Boxcar width in seconds applied before thresholding; 0 disables it.
    pub smoothing: f64,
    pub levels: Levels,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            axis_angle: 0.0,
            hysteresis: DEFAULT_HYSTERESIS,
            min_dwell: 0.0,
            smoothing: 0.0,
            levels: Levels::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvents {
    /// Seconds from the trace start, strictly increasing.
    pub event_times: Vec<f64>,
    /// State entered at each event.
    pub new_states: Vec<i8>,
    pub initial_state: i8,
    /// State of each complete dwell between consecutive events.
    pub state_sequence: Vec<i8>,
    /// Complete dwells only; the partial first and last dwells are censored.
    pub dwell_times: Vec<f64>,
    /// Per-direction rate, events / duration.
    pub rate_estimate: f64,
    /// (upper, lower) in signal units.
    pub thresholds: (f64, f64),
    pub min_dwell: f64,
    pub duration: f64,
    pub center: f64,
    pub half_separation: f64,
}

impl SwitchEvents {
    pub fn count(&self) -> usize {
        self.event_times.len()
    }
}

/// Projection onto the state axis at `angle`.
pub fn project(trace: &TraceRecord, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    trace
        .i_samples
        .iter()
        .zip(&trace.q_samples)
        .map(|(&i, &q)| c * i as f64 + s * q as f64)
        .collect()
}

/// Centered moving average with a window shrunk at the edges.
pub fn boxcar(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let half = width / 2;
    (0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + width - half).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Two-mode level estimate: (center, half-separation, within-mode σ).
pub fn estimate_levels(x: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() < 4 {
        return Err(Error::NoBistability);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut split = sorted[sorted.len() / 2];
    let mut stats = None;
    for _ in 0..50 {
        let (lo, hi): (Vec<f64>, Vec<f64>) = x.iter().partition(|&&v| v < split);
        if lo.is_empty() || hi.is_empty() {
            return Err(Error::NoBistability);
        }
        let (ml, sl) = mean_std(&lo);
        let (mh, sh) = mean_std(&hi);
        let (nl, nh) = (lo.len() as f64, hi.len() as f64);
        let pooled = ((nl * sl * sl + nh * sh * sh) / (nl + nh)).sqrt();
        let next = 0.5 * (ml + mh);
        stats = Some((next, 0.5 * (mh - ml), pooled));
        if next == split {
            break;
        }
        split = next;
    }
    let (center, a, sigma) = stats.unwrap();
    if !(a > 2.0 * sigma) {
        return Err(Error::NoBistability);
    }
    Ok((center, a, sigma))
}

/// Drops every pair of events that bounds a dwell shorter than `min_dwell`.
/// Applying it twice gives the same result as applying it once.
pub fn merge_short_dwells(events: &[(f64, i8)], min_dwell: f64) -> Vec<(f64, i8)> {
    let mut stack: Vec<(f64, i8)> = Vec::with_capacity(events.len());
    for &e in events {
        match stack.last() {
            Some(&(t, _)) if e.0 - t < min_dwell => {
                stack.pop();
            }
            _ => stack.push(e),
        }
    }
    stack
}

pub fn detect_switches(trace: &TraceRecord, axis_angle: f64, hysteresis: f64, min_dwell: f64) -> Result<SwitchEvents> {
    detect_switches_with(
        trace,
        &DetectorOptions {
            axis_angle,
            hysteresis,
            min_dwell,
            ..Default::default()
        },
    )
}

pub fn detect_switches_with(trace: &TraceRecord, opts: &DetectorOptions) -> Result<SwitchEvents> {
    let fs = trace.sample_rate;
    if !(0.0..1.0).contains(&opts.hysteresis) {
        return Err(Error::invalid("hysteresis", "must lie in [0, 1)"));
    }
    if !(opts.min_dwell >= 2.0 / fs) {
        return Err(Error::invalid("min_dwell", format!("must be at least 2 samples ({} s)", 2.0 / fs)));
    }
    if !(opts.smoothing >= 0.0) {
        return Err(Error::invalid("smoothing", "must be non-negative"));
    }
    let width = (opts.smoothing * fs).round() as usize;
    let x = boxcar(&project(trace, opts.axis_angle), width);
    let (center, a) = match opts.levels {
        Levels::Auto => {
            let (c, a, _) = estimate_levels(&x)?;
            (c, a)
        }
        Levels::Known {
            center,
            half_separation,
        } => {
            if !(half_separation > 0.0) {
                return Err(Error::invalid("levels.half_separation", "must be positive"));
            }
            (center, half_separation)
        }
    };
    let upper = center + opts.hysteresis * a;
    let lower = center - opts.hysteresis * a;

    let initial_state: i8 = if x.first().is_some_and(|&v| v < center) { -1 } else { 1 };
    let mut state = initial_state;
    let mut raw = Vec::new();
    for (k, &v) in x.iter().enumerate() {
        if state < 0 && v > upper {
            state = 1;
            raw.push((k as f64 / fs, 1));
        } else if state > 0 && v < lower {
            state = -1;
            raw.push((k as f64 / fs, -1));
        }
    }
    let merged = merge_short_dwells(&raw, opts.min_dwell);
    let event_times: Vec<f64> = merged.iter().map(|e| e.0).collect();
    let new_states: Vec<i8> = merged.iter().map(|e| e.1).collect();
    let dwell_times = event_times.windows(2).map(|w| w[1] - w[0]).collect();
    let state_sequence = new_states.iter().take(new_states.len().saturating_sub(1)).copied().collect();
    let duration = trace.duration;
    Ok(SwitchEvents {
        rate_estimate: event_times.len() as f64 / duration,
        event_times,
        new_states,
        initial_state,
        state_sequence,
        dwell_times,
        thresholds: (upper, lower),
        min_dwell: opts.min_dwell,
        duration,
        center,
        half_separation: a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellStats {
    pub mean_dwell_up: f64,
    pub mean_dwell_down: f64,
    /// Maximum-likelihood exponential rate, complete dwells / total dwell time.
    pub ml_rate: f64,
    pub ml_rate_err: f64,
    /// Kolmogorov–Smirnov distance between the dwell distribution and the
    /// fitted exponential.
    pub ks_statistic: f64,
    pub dwell_count: usize,
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 { f64::NAN } else { s / n as f64 }
}

pub fn dwell_statistics(events: &SwitchEvents) -> Result<DwellStats> {
    let d = &events.dwell_times;
    if d.len() < MIN_DWELLS {
        return Err(Error::InsufficientEvents {
            found: d.len(),
            needed: MIN_DWELLS,
        });
    }
    let n = d.len() as f64;
    let rate = n / d.iter().sum::<f64>();
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    for (k, &t) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-rate * t).exp();
        ks = ks.max((k as f64 + 1.0) / n - cdf).max(cdf - k as f64 / n);
    }
    let by_state = |s: i8| mean_of(d.iter().zip(&events.state_sequence).filter(|(_, &st)| st == s).map(|(t, _)| *t));
    Ok(DwellStats {
        mean_dwell_up: by_state(1),
        mean_dwell_down: by_state(-1),
        ml_rate: rate,
        ml_rate_err: rate / n.sqrt(),
        ks_statistic: ks,
        dwell_count: d.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCrosscheck {
    /// `None` when the fit is resolution-limited or did not converge.
    pub fit_rate: Option<f64>,
    pub count_rate: f64,
    pub ratio: Option<f64>,
    pub consistent: Option<bool>,
}

pub fn crosscheck_rates(fit: &LorentzianFit, events: &SwitchEvents) -> RateCrosscheck {
    let fit_rate = (fit.converged && !fit.resolution_limited).then_some(fit.corner_rate);
    let ratio = fit_rate.filter(|_| events.rate_estimate > 0.0).map(|g| g / events.rate_estimate);
    RateCrosscheck {
        fit_rate,
        count_rate: events.rate_estimate,
        ratio,
        consistent: ratio.map(|r| (0.8..=1.25).contains(&r)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{TelegraphPath, TraceMetadata};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp, StandardNormal};

    fn trace_from(i: Vec<f64>, fs: f64) -> TraceRecord {
        let n = i.len();
        TraceRecord::new(
            fs,
            i.into_iter().map(|v| v as f32).collect(),
            vec![0.0; n],
            TraceMetadata::default(),
        )
        .unwrap()
    }

    fn noisy_telegraph(rate: f64, dur: f64, fs: f64, sigma: f64, seed: u64) -> (TraceRecord, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = TelegraphPath::sample(rate, dur, &mut rng);
        let x: Vec<f64> = path
            .render(fs)
            .into_iter()
            .map(|s| s as f64 + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rendered = path.render(fs);
        let flips = rendered.windows(2).filter(|w| w[0] != w[1]).count();
        (trace_from(x, fs), flips)
    }

    #[test]
    fn clean_ten_transitions() {
        let mut x = Vec::new();
        for k in 0..11 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            x.extend(std::iter::repeat_n(s, 100));
        }
        let ev = detect_switches(&trace_from(x, 1000.0), 0.0, 0.5, 0.005).unwrap();
        assert_eq!(ev.count(), 10);
        assert_eq!(ev.dwell_times.len(), 9);
        assert!(ev.dwell_times.iter().all(|&d| (d - 0.1).abs() < 1e-12));
        assert_eq!(ev.initial_state, 1);
        assert_eq!(ev.new_states[0], -1);
        assert!((ev.rate_estimate - 10.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn noisy_count_within_two_percent() {
        let (t, truth) = noisy_telegraph(100.0, 20.0, 100_000.0, 0.1, 11);
        assert!(truth >= 1000);
        let ev = detect_switches(&t, 0.0, 0.5, 20e-6).unwrap();
        let err = (ev.count() as f64 - truth as f64).abs() / truth as f64;
        assert!(err <= 0.02, "{} vs {truth}", ev.count());
    }

    #[test]
    fn hysteresis_immunity() {
        let (t, truth) = noisy_telegraph(50.0, 40.0, 50_000.0, 0.2, 12);
        let ev = detect_switches(&t, 0.0, 0.5, 40e-6).unwrap();
        let excess = ev.count().saturating_sub(truth);
        assert!((excess as f64) < 1e-3 * truth as f64, "{} vs {truth}", ev.count());
    }

    #[test]
    fn frozen_trace() {
        let t = trace_from(vec![1.0; 5000], 1000.0);
        assert!(matches!(detect_switches(&t, 0.0, 0.5, 0.01), Err(Error::NoBistability)));
        let opts = DetectorOptions {
            min_dwell: 0.01,
            levels: Levels::Known { center: 0.0, half_separation: 1.0 },
            ..Default::default()
        };
        let ev = detect_switches_with(&t, &opts).unwrap();
        assert_eq!(ev.count(), 0);
        assert_eq!(ev.rate_estimate, 0.0);
    }

    #[test]
    fn unimodal_noise_is_not_bistable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(matches!(detect_switches(&trace_from(x, 1000.0), 0.0, 0.5, 0.01), Err(Error::NoBistability)));
    }

    #[test]
    fn preconditions() {
        let (t, _) = noisy_telegraph(10.0, 1.0, 1000.0, 0.0, 1);
        assert!(detect_switches(&t, 0.0, 1.0, 0.01).is_err());
        assert!(detect_switches(&t, 0.0, 0.5, 1.0 / 1000.0).is_err());
    }

    #[test]
    fn rotated_axis() {
        let (t, truth) = noisy_telegraph(20.0, 5.0, 10_000.0, 0.05, 5);
        let r = t.rotated(0.7);
        let ev = detect_switches(&r, 0.7, 0.5, 1e-3).unwrap();
        let plain = detect_switches(&t, 0.0, 0.5, 1e-3).unwrap();
        assert_eq!(ev.count(), plain.count());
        let ev = detect_switches(&r, 0.7, 0.5, 2e-4).unwrap();
        assert!(ev.count().abs_diff(truth) <= 4, "{} vs {truth}", ev.count());
    }

    #[test]
    fn rate_consistency_scales() {
        for (k, gt) in [1e2, 1e3, 1e4].into_iter().enumerate() {
            let rate = 50.0;
            let (t, _) = noisy_telegraph(rate, gt / rate, 20_000.0, 0.05, 20 + k as u64);
            let ev = detect_switches(&t, 0.0, 0.5, 2e-4).unwrap();
            let rel = (ev.rate_estimate / rate - 1.0).abs();
            assert!(rel < 3.0 / gt.sqrt(), "γT={gt}: {rel}");
        }
    }

    fn events_from_dwells(dwells: &[f64]) -> SwitchEvents {
        let mut t = 0.5;
        let mut times = vec![t];
        for d in dwells {
            t += d;
            times.push(t);
        }
        let states: Vec<i8> = (0..times.len()).map(|k| if k % 2 == 0 { -1 } else { 1 }).collect();
        SwitchEvents {
            dwell_times: dwells.to_vec(),
            state_sequence: states[..dwells.len()].to_vec(),
            new_states: states,
            rate_estimate: times.len() as f64 / (t + 0.5),
            event_times: times,
            initial_state: 1,
            thresholds: (0.5, -0.5),
            min_dwell: 0.0,
            duration: t + 0.5,
            center: 0.0,
            half_separation: 1.0,
        }
    }

    #[test]
    fn ml_rate_of_exponential_dwells() {
        let gamma = 40.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let exp = Exp::new(gamma).unwrap();
        let d: Vec<f64> = (0..2000).map(|_| rng.sample(exp)).collect();
        let s = dwell_statistics(&events_from_dwells(&d)).unwrap();
        let sigma = gamma / (d.len() as f64).sqrt();
        assert!((s.ml_rate - gamma).abs() < 2.0 * sigma);
        assert!(s.ks_statistic < 0.05);
    }

    #[test]
    fn square_wave_fails_ks() {
        let d = vec![0.01; 200];
        let s = dwell_statistics(&events_from_dwells(&d)).unwrap();
        // brute-force: the empirical CDF jumps from 0 to 1 at t = 1/λ
        let brute = (1.0 - (-1.0f64).exp()).max((-1.0f64).exp());
        assert!((s.ks_statistic - brute).abs() < 1e-9);
        assert!(s.ks_statistic > 0.5);
    }

    #[test]
    fn too_few_dwells() {
        let d = vec![0.01; 19];
        assert!(matches!(
            dwell_statistics(&events_from_dwells(&d)),
            Err(Error::InsufficientEvents { found: 19, needed: 20 })
        ));
    }

    #[test]
    fn crosscheck_flags() {
        let ev = events_from_dwells(&vec![0.01; 30]);
        let mut fit = LorentzianFit {
            amplitude: 2.0,
            corner_rate: ev.rate_estimate,
            white_floor: 1e-6,
            f_w: None,
            covariance: [[0.0; 3]; 3],
            fit_band: (1.0, 100.0),
            residual_norm: 0.0,
            converged: true,
            resolution_limited: false,
            iterations: 1,
        };
        let c = crosscheck_rates(&fit, &ev);
        assert_eq!(c.consistent, Some(true));
        assert!((c.ratio.unwrap() - 1.0).abs() < 1e-12);
        fit.resolution_limited = true;
        let c = crosscheck_rates(&fit, &ev);
        assert_eq!(c.fit_rate, None);
        assert_eq!(c.consistent, None);
    }

    proptest! {
        #[test]
        fn merge_is_idempotent(gaps in proptest::collection::vec(0.0f64..3.0, 0..60), min in 0.1f64..2.0) {
            let mut t = 0.0;
            let events: Vec<(f64, i8)> = gaps.iter().enumerate().map(|(k, g)| {
                t += g + 1e-9;
                (t, if k % 2 == 0 { -1 } else { 1 })
            }).collect();
            let once = merge_short_dwells(&events, min);
            let twice = merge_short_dwells(&once, min);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.windows(2).all(|w| w[1].0 - w[0].0 >= min && w[0].1 != w[1].1));
        }
    }
}
