//! Welch cross-spectral estimation and the multistage FIR decimation chain.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::positive;
use crate::simulate::TraceRecord;

/// Segments summed per parallel work item; the reduction order depends only
/// on this constant, never on the thread count.
const SEGMENTS_PER_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
    Blackman,
}

impl Window {
    /// Periodic (DFT-even) window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let tau = 2.0 * std::f64::consts::PI;
        (0..n)
            .map(|k| {
                let x = tau * k as f64 / n as f64;
                match self {
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Rectangular => 1.0,
                    Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                }
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
            Window::Blackman => "blackman",
        }
    }
}

/// One-sided 2×2 cross-spectral density matrix per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    pub frequencies: Vec<f64>,
    pub s_ii: Vec<f64>,
    pub s_qq: Vec<f64>,
    /// ⟨X_I X_Q*⟩ with the same normalisation as the auto spectra.
    pub s_iq: Vec<Complex64>,
    pub resolution_bandwidth: f64,
    pub segment_count: usize,
    pub window: Window,
}

impl SpectralMatrix {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Σ S·Δν for the I and Q channels.
    pub fn integrated_power(&self) -> (f64, f64) {
        let df = self.resolution_bandwidth;
        (
            self.s_ii.iter().sum::<f64>() * df,
            self.s_qq.iter().sum::<f64>() * df,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WelchSettings {
    pub segment_length: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchSettings {
    fn default() -> Self {
        WelchSettings {
            segment_length: 1 << 18,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

/// Shortest power-of-two segment with resolution bandwidth ≤ target_rate/10,
/// capped so that a 50%-overlap Welch run still averages at least 7 segments.
pub fn segment_for_corner(target_rate: f64, sample_rate: f64, record_len: usize) -> usize {
    let want = (10.0 * sample_rate / target_rate).ceil().max(16.0) as usize;
    let want = want.next_power_of_two();
    let cap = prev_power_of_two((record_len / 4).max(16));
    want.min(cap)
}

fn prev_power_of_two(n: usize) -> usize {
    1usize << (usize::BITS - 1 - n.leading_zeros())
}

fn demeaned(x: &[f32]) -> Vec<f64> {
    let mean = pairwise_sum(&x.iter().map(|&v| v as f64).collect::<Vec<_>>()) / x.len() as f64;
    x.iter().map(|&v| v as f64 - mean).collect()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

struct Accum {
    ii: Vec<f64>,
    qq: Vec<f64>,
    iq: Vec<Complex64>,
}

impl Accum {
    fn zeros(bins: usize) -> Self {
        Accum {
            ii: vec![0.0; bins],
            qq: vec![0.0; bins],
            iq: vec![Complex64::new(0.0, 0.0); bins],
        }
    }

    fn add(&mut self, other: &Accum) {
        for k in 0..self.ii.len() {
            self.ii[k] += other.ii[k];
            self.qq[k] += other.qq[k];
            self.iq[k] += other.iq[k];
        }
    }
}

/// Welch estimate of S(ν) from fluctuations about each channel's mean.
pub fn welch_cross_spectrum(trace: &TraceRecord, settings: &WelchSettings) -> Result<SpectralMatrix> {
    let WelchSettings {
        segment_length: seg,
        overlap,
        window,
    } = *settings;
    if seg < 2 {
        return Err(Error::invalid("segment_length", "must be >= 2"));
    }
    if !(0.0..=0.9).contains(&overlap) {
        return Err(Error::invalid("overlap", "must lie in [0, 0.9]"));
    }
    let n = trace.len();
    if n < seg {
        return Err(Error::InsufficientData(format!(
            "trace has {n} samples, one segment needs {seg}"
        )));
    }
    let fs = trace.sample_rate;
    let x = demeaned(&trace.i_samples);
    let y = demeaned(&trace.q_samples);

    let step = (seg - (overlap * seg as f64).round() as usize).max(1);
    let count = (n - seg) / step + 1;
    let w = window.coefficients(seg);
    let u: f64 = w.iter().map(|v| v * v).sum();
    let bins = seg / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);

    let chunks: Vec<Accum> = (0..count.div_ceil(SEGMENTS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum::zeros(bins);
            let mut buf = vec![Complex64::new(0.0, 0.0); seg];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let first = c * SEGMENTS_PER_CHUNK;
            for s in first..(first + SEGMENTS_PER_CHUNK).min(count) {
                let off = s * step;
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(w[k] * x[off + k], w[k] * y[off + k]);
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                // unpack the two real transforms from z = x + i·y
                for k in 0..bins {
                    let zk = buf[k];
                    let zc = buf[(seg - k) % seg].conj();
                    let xi = (zk + zc) * 0.5;
                    let xq = (zk - zc) * Complex64::new(0.0, -0.5);
                    acc.ii[k] += xi.norm_sqr();
                    acc.qq[k] += xq.norm_sqr();
                    acc.iq[k] += xi * xq.conj();
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::zeros(bins);
    for c in &chunks {
        total.add(c);
    }

    let norm = 1.0 / (fs * u * count as f64);
    let mut out = SpectralMatrix {
        frequencies: (0..bins).map(|k| k as f64 * fs / seg as f64).collect(),
        s_ii: Vec::with_capacity(bins),
        s_qq: Vec::with_capacity(bins),
        s_iq: Vec::with_capacity(bins),
        resolution_bandwidth: fs / seg as f64,
        segment_count: count,
        window,
    };
    for k in 0..bins {
        let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) { 1.0 } else { 2.0 };
        let s = one_sided * norm;
        out.s_ii.push(total.ii[k] * s);
        out.s_qq.push(total.qq[k] * s);
        out.s_iq.push(total.iq[k] * s);
    }
    // packing leaks rounding noise across channels; a null channel stays null
    let x_null = x.iter().all(|&v| v == 0.0);
    let y_null = y.iter().all(|&v| v == 0.0);
    if x_null || y_null {
        out.s_iq.fill(Complex64::new(0.0, 0.0));
    }
    if x_null {
        out.s_ii.fill(0.0);
    }
    if y_null {
        out.s_qq.fill(0.0);
    }
    Ok(out)
}

/// Bin-wise mean of repeated estimates on the same grid.
pub fn average_spectral_matrices(list: &[SpectralMatrix]) -> Result<SpectralMatrix> {
    let first = list
        .first()
        .ok_or_else(|| Error::InsufficientData("no spectra to average".into()))?;
    if list.iter().any(|m| m.frequencies != first.frequencies) {
        return Err(Error::GridMismatch);
    }
    let k = list.len() as f64;
    let mut out = first.clone();
    for b in 0..first.len() {
        out.s_ii[b] = list.iter().map(|m| m.s_ii[b]).sum::<f64>() / k;
        out.s_qq[b] = list.iter().map(|m| m.s_qq[b]).sum::<f64>() / k;
        out.s_iq[b] = list.iter().map(|m| m.s_iq[b]).sum::<Complex64>() / k;
    }
    out.segment_count = list.iter().map(|m| m.segment_count).sum();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecimationStage {
    pub factor: u32,
    /// Passband edge as a fraction of this stage's output Nyquist rate.
    pub passband_edge: f64,
    pub stopband_atten: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecimationPlan {
    pub stages: Vec<DecimationStage>,
    pub input_rate: f64,
    pub output_rate: f64,
    #[serde(default = "default_max_taps")]
    pub max_taps: usize,
}

fn default_max_taps() -> usize {
    512
}

impl DecimationPlan {
    pub fn new(input_rate: f64, stages: Vec<DecimationStage>) -> Result<Self> {
        let total: u64 = stages.iter().map(|s| s.factor as u64).product();
        let plan = DecimationPlan {
            output_rate: input_rate / total as f64,
            stages,
            input_rate,
            max_taps: default_max_taps(),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 500 MSa/s → 1 MSa/s through factors 5, 4 and 25.
    pub fn digitizer_default() -> Self {
        let stage = |factor| DecimationStage {
            factor,
            passband_edge: 0.8,
            stopband_atten: 60.0,
        };
        DecimationPlan::new(500e6, vec![stage(5), stage(4), stage(25)]).expect("valid default plan")
    }

    pub fn total_factor(&self) -> u64 {
        self.stages.iter().map(|s| s.factor as u64).product()
    }

    pub fn validate(&self) -> Result<()> {
        positive("input_rate", self.input_rate)?;
        if self.stages.is_empty() {
            return Err(Error::invalid("stages", "plan needs at least one stage"));
        }
        for s in &self.stages {
            if s.factor < 2 {
                return Err(Error::invalid("factor", "each stage factor must be >= 2"));
            }
            if !(s.passband_edge > 0.0 && s.passband_edge < 1.0) {
                return Err(Error::invalid("passband_edge", "must lie in (0, 1)"));
            }
            positive("stopband_atten", s.stopband_atten)?;
        }
        let expected = self.input_rate / self.total_factor() as f64;
        if (self.output_rate * self.total_factor() as f64 - self.input_rate).abs()
            > 1e-9 * self.input_rate
        {
            return Err(Error::invalid(
                "output_rate",
                format!("output_rate x product(factors) must equal input_rate (expected {expected})"),
            ));
        }
        Ok(())
    }
}

/// Linear-phase low-pass taps of one decimation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FirStage {
    pub factor: u32,
    pub taps: Vec<f64>,
    /// Passband and stopband edges in cycles per input sample.
    pub passband: f64,
    pub stopband: f64,
}

impl FirStage {
    /// |H| in dB on a dense grid over [0, 0.5] cycles/sample.
    pub fn response_db(&self, points: usize) -> Vec<(f64, f64)> {
        let n_fft = (points * 2).next_power_of_two().max(self.taps.len().next_power_of_two() * 16);
        let mut buf: Vec<Complex64> = self.taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        buf.resize(n_fft, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
        (0..=n_fft / 2)
            .map(|k| (k as f64 / n_fft as f64, 20.0 * buf[k].norm().max(1e-300).log10()))
            .collect()
    }

    /// (worst passband deviation in dB, worst stopband level in dB).
    pub fn measured_bands(&self) -> (f64, f64) {
        let resp = self.response_db(8192);
        let ripple = resp
            .iter()
            .filter(|(f, _)| *f <= self.passband)
            .map(|(_, db)| db.abs())
            .fold(0.0, f64::max);
        let stop = resp
            .iter()
            .filter(|(f, _)| *f >= self.stopband)
            .map(|(_, db)| *db)
            .fold(f64::NEG_INFINITY, f64::max);
        (ripple, stop)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser_beta(atten: f64) -> f64 {
    if atten > 50.0 {
        0.1102 * (atten - 8.7)
    } else if atten >= 21.0 {
        0.5842 * (atten - 21.0).powf(0.4) + 0.07886 * (atten - 21.0)
    } else {
        0.0
    }
}

fn kaiser_lowpass(len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let mid = (len - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            let r = x / mid.max(1.0);
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    taps
}

/// Kaiser windowed-sinc design per stage.
///
/// For a stage of factor M the passband edge is `passband_edge` of the
/// output Nyquist rate and the stopband starts where images would fold back
/// onto that passband, f_out − f_pass. The tap count starts from the Kaiser
/// estimate and grows until the measured response meets ≤ 0.1 dB ripple and
/// the stopband attenuation, or the tap budget is exhausted.
pub fn design_decimator(plan: &DecimationPlan) -> Result<Vec<FirStage>> {
    plan.validate()?;
    const MAX_RIPPLE_DB: f64 = 0.1;
    plan.stages
        .iter()
        .map(|stage| {
            let m = stage.factor as f64;
            let passband = stage.passband_edge * 0.5 / m;
            let stopband = 1.0 / m - passband;
            let atten = stage.stopband_atten;
            let beta = kaiser_beta(atten);
            let est = ((atten - 7.95) / (14.36 * (stopband - passband))).ceil() as usize + 1;
            let mut len = est.max(3) | 1;
            while len <= plan.max_taps {
                let fir = FirStage {
                    factor: stage.factor,
                    taps: kaiser_lowpass(len, 0.5 * (passband + stopband), beta),
                    passband,
                    stopband,
                };
                let (ripple, stop) = fir.measured_bands();
                if ripple <= MAX_RIPPLE_DB && stop <= -atten {
                    return Ok(fir);
                }
                len += 2;
            }
            Err(Error::DesignInfeasible(format!(
                "factor {} with {atten} dB stopband needs more than {} taps",
                stage.factor, plan.max_taps
            )))
        })
        .collect()
}

/// Filters and downsamples one channel. Output m is centred on input m·M
/// (group delay removed); samples beyond the ends repeat the edge value.
pub fn decimate_channel(x: &[f64], stage: &FirStage) -> Vec<f64> {
    let m = stage.factor as usize;
    let n_out = x.len() / m;
    let half = (stage.taps.len() - 1) / 2;
    let last = x.len() as isize - 1;
    (0..n_out)
        .into_par_iter()
        .map(|j| {
            let centre = (j * m) as isize;
            stage
                .taps
                .iter()
                .enumerate()
                .map(|(k, &h)| {
                    let idx = (centre + half as isize - k as isize).clamp(0, last);
                    h * x[idx as usize]
                })
                .sum()
        })
        .collect()
}

pub fn apply_decimation(trace: &TraceRecord, plan: &DecimationPlan) -> Result<TraceRecord> {
    if (trace.sample_rate - plan.input_rate).abs() > 1e-9 * plan.input_rate {
        return Err(Error::RateMismatch {
            trace: trace.sample_rate,
            expected: plan.input_rate,
        });
    }
    let stages = design_decimator(plan)?;
    apply_stages(trace, &stages)
}

pub fn apply_stages(trace: &TraceRecord, stages: &[FirStage]) -> Result<TraceRecord> {
    let mut i: Vec<f64> = trace.i_samples.iter().map(|&v| v as f64).collect();
    let mut q: Vec<f64> = trace.q_samples.iter().map(|&v| v as f64).collect();
    let mut rate = trace.sample_rate;
    let mut meta = trace.metadata.clone();
    for st in stages {
        i = decimate_channel(&i, st);
        q = decimate_channel(&q, st);
        rate /= st.factor as f64;
        meta.decimation_history.push(st.factor);
    }
    Ok(TraceRecord {
        sample_rate: rate,
        duration: trace.duration,
        i_samples: i.into_iter().map(|v| v as f32).collect(),
        q_samples: q.into_iter().map(|v| v as f32).collect(),
        metadata: meta,
    })
}
