//! Synthetic homodyne I/Q records: a telegraph process between the two
//! oscillation phase states, white and 1/f measurement noise, mains pickup and
//! digitizer quantization.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    oscillation_region, positive, switching_rate, DeviceParams, PumpCalibration, PumpSettings,
    SwitchingLaw,
};

const STREAM_TELEGRAPH: u64 = 1;
const STREAM_WHITE_I: u64 = 2;
const STREAM_WHITE_Q: u64 = 3;
const STREAM_FLICKER: u64 = 4;

/// Stable seed mixing (SplitMix64 finalizer applied to `master ⊕ mix(index)`).
///
/// Used both for sweep points (`index` = point number) and for the internal
/// noise streams of one trace.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Number of samples in a record of `duration` seconds.
pub fn sample_count(sample_rate: f64, duration: f64) -> usize {
    (sample_rate * duration).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub pump_power_dbm: f64,
    pub pump_frequency: f64,
    pub flux_bias: f64,
    pub seed: u64,
    /// Decimation factors applied so far, in order.
    pub decimation_history: Vec<u32>,
    pub units: String,
    pub created_at: String,
    /// Set when the quantizer clipped at least one sample.
    pub clipped: bool,
    /// Whether the simulated pump was above the parametric threshold.
    pub oscillating: bool,
}

impl Default for TraceMetadata {
    fn default() -> Self {
        TraceMetadata {
            pump_power_dbm: 0.0,
            pump_frequency: 0.0,
            flux_bias: 0.0,
            seed: 0,
            decimation_history: Vec::new(),
            units: "arb".to_string(),
            created_at: "1970-01-01T00:00:00Z".to_string(),
            clipped: false,
            oscillating: false,
        }
    }
}

/// Dual-channel I/Q record.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sample_rate: f64,
    pub duration: f64,
    pub i_samples: Vec<f32>,
    pub q_samples: Vec<f32>,
    pub metadata: TraceMetadata,
}

impl TraceRecord {
    pub fn new(
        sample_rate: f64,
        i_samples: Vec<f32>,
        q_samples: Vec<f32>,
        metadata: TraceMetadata,
    ) -> Result<Self> {
        positive("sample_rate", sample_rate)?;
        if i_samples.len() != q_samples.len() {
            return Err(Error::invalid(
                "q_samples",
                format!("length {} differs from I length {}", q_samples.len(), i_samples.len()),
            ));
        }
        Ok(TraceRecord {
            sample_rate,
            duration: i_samples.len() as f64 / sample_rate,
            i_samples,
            q_samples,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.i_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_samples.is_empty()
    }

    /// Returns a copy with both channels rotated by `angle` in the I/Q plane.
    pub fn rotated(&self, angle: f64) -> TraceRecord {
        let (s, c) = angle.sin_cos();
        let (i, q) = self
            .i_samples
            .iter()
            .zip(&self.q_samples)
            .map(|(&i, &q)| {
                let (i, q) = (i as f64, q as f64);
                ((c * i - s * q) as f32, (s * i + c * q) as f32)
            })
            .unzip();
        TraceRecord {
            i_samples: i,
            q_samples: q,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainsHarmonic {
    pub index: u32,
    /// Peak amplitude, signal units.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Half-separation a of the two states along the phase axis.
    pub rts_amplitude: f64,
    /// Per-state exit rate. When absent the switching law sets the rate.
    pub rts_rate: Option<f64>,
    /// One-sided white density added to each channel, units²/Hz.
    pub white_floor_density: f64,
    /// Knee of the amplitude-channel 1/f noise, Hz.
    pub one_over_f_knee: f64,
    /// 1/f density at 1 Hz, units²/Hz.
    pub one_over_f_density: f64,
    pub mains_frequency: f64,
    pub mains_harmonics: Vec<MainsHarmonic>,
    /// Orientation of the state axis in the I/Q plane, rad.
    pub quadrature_angle: f64,
    pub quantize: bool,
    pub digitizer_bits: u32,
    pub digitizer_fullscale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rts_amplitude: 1.0,
            rts_rate: None,
            white_floor_density: 1e-6,
            one_over_f_knee: 10.0,
            one_over_f_density: 0.0,
            mains_frequency: 50.0,
            mains_harmonics: Vec::new(),
            quadrature_angle: 0.0,
            quantize: true,
            digitizer_bits: 14,
            digitizer_fullscale: 8.0,
        }
    }
}

impl NoiseConfig {
    /// Noiseless telegraph only, quantizer off.
    pub fn silent() -> Self {
        NoiseConfig {
            white_floor_density: 0.0,
            quantize: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be >= 0, got {v}")))
            }
        };
        nonneg("rts_amplitude", self.rts_amplitude)?;
        nonneg("white_floor_density", self.white_floor_density)?;
        nonneg("one_over_f_density", self.one_over_f_density)?;
        if let Some(r) = self.rts_rate {
            positive("rts_rate", r)?;
        }
        if self.one_over_f_density > 0.0 {
            positive("one_over_f_knee", self.one_over_f_knee)?;
        }
        if !self.mains_harmonics.is_empty() {
            positive("mains_frequency", self.mains_frequency)?;
        }
        if !(8..=24).contains(&self.digitizer_bits) {
            return Err(Error::invalid("digitizer_bits", "must lie in [8, 24]"));
        }
        if self.quantize {
            positive("digitizer_fullscale", self.digitizer_fullscale)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acquisition {
    pub duration: f64,
    pub sample_rate: f64,
}

impl Default for Acquisition {
    /// 10 s at 1 MSa/s.
    fn default() -> Self {
        Acquisition {
            duration: 10.0,
            sample_rate: 1e6,
        }
    }
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        positive("duration", self.duration)?;
        positive("sample_rate", self.sample_rate)?;
        if sample_count(self.sample_rate, self.duration) == 0 {
            return Err(Error::invalid("duration", "record has zero samples"));
        }
        Ok(())
    }
}

/// Exact event times of a symmetric two-state process.
#[derive(Debug, Clone, PartialEq)]
pub struct TelegraphPath {
    pub initial_state: i8,
    /// Flip times in seconds, strictly increasing, all < duration.
    pub flip_times: Vec<f64>,
    pub duration: f64,
}

impl TelegraphPath {
    /// Draws dwell times from Exp(rate) until `duration` is exceeded.
    pub fn sample<R: Rng>(rate: f64, duration: f64, rng: &mut R) -> Self {
        let initial_state = if rng.random::<bool>() { 1 } else { -1 };
        let mut flip_times = Vec::new();
        if rate > 0.0 {
            let exp = Exp::new(rate).expect("rate > 0");
            let mut t = exp.sample(rng);
            while t < duration {
                flip_times.push(t);
                t += exp.sample(rng);
            }
        }
        TelegraphPath {
            initial_state,
            flip_times,
            duration,
        }
    }

    /// State at sample instants n / sample_rate.
    pub fn render(&self, sample_rate: f64) -> Vec<i8> {
        let n = sample_count(sample_rate, self.duration);
        let mut out = Vec::with_capacity(n);
        let mut state = self.initial_state;
        let mut next = self.flip_times.iter().peekable();
        for k in 0..n {
            let t = k as f64 / sample_rate;
            while next.peek().is_some_and(|&&ft| ft <= t) {
                state = -state;
                next.next();
            }
            out.push(state);
        }
        out
    }
}

fn check_resolvable(rate: f64, sample_rate: f64) -> Result<()> {
    if !(rate >= 0.0) || rate >= sample_rate / 10.0 {
        return Err(Error::UnresolvableRate { rate, sample_rate });
    }
    Ok(())
}

/// Symmetric ±1 telegraph sampled at `sample_rate`; each state is left at
/// `rate` (mean dwell 1/rate).
pub fn generate_telegraph(rate: f64, duration: f64, sample_rate: f64, seed: u64) -> Result<Vec<i8>> {
    positive("sample_rate", sample_rate)?;
    check_resolvable(rate, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(TelegraphPath::sample(rate, duration, &mut rng).render(sample_rate))
}

/// Tap count of the 1/f shaping filter: a power of two giving a frequency
/// grid at least 200 points below the knee, clamped to [256, 2^20].
pub fn one_over_f_filter_len(knee: f64, sample_rate: f64) -> usize {
    let want = (200.0 * sample_rate / knee).ceil().max(1.0) as usize;
    want.next_power_of_two().clamp(256, 1 << 20)
}

/// Shape of the added 1/f spectrum for a filter of `len` taps:
/// zero below Δf/2, D/f up to the knee and flat at D/knee above it
/// (Δf = sample_rate/len).
#[derive(Debug, Clone, Copy)]
pub struct FlickerShape {
    pub density_at_1hz: f64,
    pub knee: f64,
    pub low_cutoff: f64,
    pub sample_rate: f64,
}

impl FlickerShape {
    pub fn new(density_at_1hz: f64, knee: f64, sample_rate: f64) -> Self {
        let len = one_over_f_filter_len(knee, sample_rate);
        FlickerShape {
            density_at_1hz,
            knee,
            low_cutoff: sample_rate / len as f64 / 2.0,
            sample_rate,
        }
    }

    fn cumulative(&self, f: f64) -> f64 {
        let d = self.density_at_1hz;
        let f = f.min(self.sample_rate / 2.0);
        if f <= self.low_cutoff {
            0.0
        } else if f <= self.knee {
            d * (f / self.low_cutoff).ln()
        } else {
            d * (self.knee / self.low_cutoff).ln() + d * (f - self.knee) / self.knee
        }
    }

    /// Total variance, the integral of the density over [0, Nyquist].
    pub fn variance(&self) -> f64 {
        self.cumulative(self.sample_rate / 2.0)
    }
}

/// Adds 1/f noise (see [`FlickerShape`]) to `samples`.
///
/// White Gaussian noise is filtered by a frequency-sampled FIR whose grid
/// gains are the bin averages of the target density, applied with
/// overlap-discard FFT convolution. `len − 1` extra leading input samples
/// are generated and discarded so the output has no start-up transient.
pub fn inject_one_over_f(
    samples: &mut [f64],
    density_at_1hz: f64,
    knee: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<()> {
    if density_at_1hz == 0.0 || samples.is_empty() {
        return Ok(());
    }
    positive("one_over_f_density", density_at_1hz)?;
    positive("sample_rate", sample_rate)?;
    if !(knee > 0.0 && knee < sample_rate / 2.0) {
        return Err(Error::invalid("one_over_f_knee", "must lie in (0, sample_rate/2)"));
    }
    let shape = FlickerShape::new(density_at_1hz, knee, sample_rate);
    let len = one_over_f_filter_len(knee, sample_rate);
    let df = sample_rate / len as f64;

    // Zero-phase grid response, then circular shift by len/2 to make it causal.
    let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
    for k in 0..=len / 2 {
        let lo = (k as f64 - 0.5) * df;
        let hi = ((k as f64 + 0.5) * df).min(sample_rate / 2.0);
        let width = hi - lo.max(0.0);
        let mean = (shape.cumulative(hi) - shape.cumulative(lo.max(0.0))) / width;
        let gain = (mean * sample_rate / 2.0).sqrt();
        spectrum[k] = Complex64::new(gain, 0.0);
        if k > 0 && k < len / 2 {
            spectrum[len - k] = Complex64::new(gain, 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(len).process(&mut spectrum);
    let taps: Vec<f64> = (0..len)
        .map(|n| spectrum[(n + len / 2) % len].re / len as f64)
        .collect();

    let mut rng = stream_rng(seed, STREAM_FLICKER);
    let white: Vec<f64> = (0..samples.len() + len - 1)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let filtered = fft_convolve_valid(&white, &taps, &mut planner);
    for (s, f) in samples.iter_mut().zip(filtered) {
        *s += f;
    }
    Ok(())
}

/// Valid part of the linear convolution (`input.len() − taps.len() + 1`
/// outputs), by overlap-save.
fn fft_convolve_valid(input: &[f64], taps: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let l = taps.len();
    let n_fft = (2 * l).next_power_of_two();
    let hop = n_fft - l + 1;
    let out_len = input.len() + 1 - l;
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n_fft);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n_fft);

    let mut h: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    h.resize(n_fft, Complex64::new(0.0, 0.0));
    forward.process(&mut h);

    let mut out = Vec::with_capacity(out_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut start = 0;
    while out.len() < out_len {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(input.get(start + j).copied().unwrap_or(0.0), 0.0);
        }
        forward.process(&mut buf);
        for (b, hk) in buf.iter_mut().zip(&h) {
            *b *= hk;
        }
        inverse.process(&mut buf);
        let take = hop.min(out_len - out.len());
        out.extend(buf[l - 1..l - 1 + take].iter().map(|c| c.re / n_fft as f64));
        start += hop;
    }
    out
}

/// Uniform mid-tread quantizer with 2^bits levels spanning ±fullscale.
#[derive(Debug, Clone, Copy)]
pub struct Quantizer {
    pub bits: u32,
    pub fullscale: f64,
}

impl Quantizer {
    pub fn step(&self) -> f64 {
        2.0 * self.fullscale / ((1u64 << self.bits) - 1) as f64
    }

    /// Quantized value and whether the input was clipped.
    pub fn apply(&self, x: f64) -> (f64, bool) {
        let top = ((1u64 << self.bits) - 1) as f64;
        let clipped = x.abs() > self.fullscale;
        let level = ((x + self.fullscale) / self.step()).round().clamp(0.0, top);
        (-self.fullscale + level * self.step(), clipped)
    }
}

/// Everything needed to synthesize one operating point.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub device: &'a DeviceParams,
    pub pump: &'a PumpSettings,
    pub calibration: &'a PumpCalibration,
    pub law: &'a SwitchingLaw,
    pub noise: &'a NoiseConfig,
}

/// Synthesizes one I/Q record.
///
/// The phase axis carries a·telegraph(Γ(P)) when the pump is above threshold
/// (nothing otherwise) and the amplitude axis carries the 1/f noise. Both are
/// rotated by `quadrature_angle`, white noise and mains tones are added to
/// each channel, and the result is quantized.
pub fn synthesize_trace(scenario: Scenario<'_>, acquisition: Acquisition, seed: u64) -> Result<TraceRecord> {
    let Scenario {
        device,
        pump,
        calibration,
        law,
        noise,
    } = scenario;
    noise.validate()?;
    acquisition.validate()?;
    let fs = acquisition.sample_rate;
    let n = sample_count(fs, acquisition.duration);

    let state = oscillation_region(device, pump, calibration);
    let rate = noise
        .rts_rate
        .unwrap_or_else(|| switching_rate(law, pump.pump_power_dbm));

    let mut phase = vec![0.0; n];
    if state.oscillating && noise.rts_amplitude > 0.0 {
        check_resolvable(rate, fs)?;
        let mut rng = stream_rng(seed, STREAM_TELEGRAPH);
        let path = TelegraphPath::sample(rate, acquisition.duration, &mut rng);
        for (p, s) in phase.iter_mut().zip(path.render(fs)) {
            *p = noise.rts_amplitude * s as f64;
        }
    }
    let mut amplitude = vec![0.0; n];
    inject_one_over_f(
        &mut amplitude,
        noise.one_over_f_density,
        noise.one_over_f_knee,
        fs,
        seed,
    )?;

    let (sin, cos) = noise.quadrature_angle.sin_cos();
    let sigma = (noise.white_floor_density * fs / 2.0).sqrt();
    let mut rng_i = stream_rng(seed, STREAM_WHITE_I);
    let mut rng_q = stream_rng(seed, STREAM_WHITE_Q);
    let quantizer = noise.quantize.then_some(Quantizer {
        bits: noise.digitizer_bits,
        fullscale: noise.digitizer_fullscale,
    });
    let tones: Vec<(f64, f64)> = noise
        .mains_harmonics
        .iter()
        .map(|h| (2.0 * std::f64::consts::PI * noise.mains_frequency * h.index as f64, h.amplitude))
        .collect();

    let mut clipped = false;
    let mut i_out = Vec::with_capacity(n);
    let mut q_out = Vec::with_capacity(n);
    for k in 0..n {
        let (x, y) = (phase[k], amplitude[k]);
        let mut i = cos * x - sin * y;
        let mut q = sin * x + cos * y;
        if sigma > 0.0 {
            i += sigma * rng_i.sample::<f64, _>(StandardNormal);
            q += sigma * rng_q.sample::<f64, _>(StandardNormal);
        }
        if !tones.is_empty() {
            let t = k as f64 / fs;
            let hum: f64 = tones.iter().map(|&(w, a)| a * (w * t).sin()).sum();
            i += hum;
            q += hum;
        }
        if let Some(qz) = quantizer {
            let (qi, ci) = qz.apply(i);
            let (qq, cq) = qz.apply(q);
            clipped |= ci | cq;
            i = qi;
            q = qq;
        }
        i_out.push(i as f32);
        q_out.push(q as f32);
    }

    let metadata = TraceMetadata {
        pump_power_dbm: pump.pump_power_dbm,
        pump_frequency: pump.pump_frequency,
        flux_bias: pump.flux_bias,
        seed,
        clipped,
        oscillating: state.oscillating,
        ..Default::default()
    };
    Ok(TraceRecord {
        sample_rate: fs,
        duration: acquisition.duration,
        i_samples: i_out,
        q_samples: q_out,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PumpCalibration;

    fn fixtures() -> (DeviceParams, PumpSettings, PumpCalibration, SwitchingLaw) {
        let device = DeviceParams::reference();
        let pump = PumpSettings::degenerate(&device, -60.0, 0.35).unwrap();
        let cal = PumpCalibration::from_threshold(&device, -66.0);
        let law = SwitchingLaw {
            rate_at_ref: 300.0,
            ref_power_dbm: -64.0,
            slope_per_db: 0.5,
            white_floor: 0.0,
        };
        (device, pump, cal, law)
    }

    #[test]
    fn telegraph_transition_count_is_poisson() {
        // each state is left at rate γ, so flips form a Poisson process of rate γ
        let rate = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = TelegraphPath::sample(rate, 100.0, &mut rng);
        let expected = rate * 100.0;
        let n = path.flip_times.len() as f64;
        assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n}");
    }

    #[test]
    fn telegraph_frozen_and_unresolvable() {
        let s = generate_telegraph(0.0, 1.0, 1000.0, 3).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
        assert_eq!(s.len(), 1000);
        assert!(matches!(
            generate_telegraph(200.0, 1.0, 1000.0, 3),
            Err(Error::UnresolvableRate { .. })
        ));
    }

    #[test]
    fn telegraph_autocorrelation_ensemble() {
        // ⟨s(t)s(t+τ)⟩ = exp(−2γτ), averaged over 200 seeds
        let (rate, fs) = (20.0, 2000.0);
        let lags = [0usize, 10, 25, 50];
        let mut acc = [0.0; 4];
        let seeds = 200;
        for seed in 0..seeds {
            let s = generate_telegraph(rate, 1.0, fs, seed).unwrap();
            for (a, &lag) in acc.iter_mut().zip(&lags) {
                let m = s.len() - lag;
                let sum: f64 = (0..m).map(|k| (s[k] * s[k + lag]) as f64).sum();
                *a += sum / m as f64;
            }
        }
        for (a, &lag) in acc.iter().zip(&lags) {
            let got = a / seeds as f64;
            let want = (-2.0 * rate * lag as f64 / fs).exp();
            assert!((got - want).abs() < 0.05, "lag {lag}: {got} vs {want}");
        }
    }

    #[test]
    fn telegraph_occupancy_is_balanced() {
        let s = generate_telegraph(100.0, 200.0, 2000.0, 99).unwrap();
        let up = s.iter().filter(|&&v| v > 0).count() as f64 / s.len() as f64;
        // correlated samples: N_eff ≈ γT independent dwells
        let sigma = 0.5 / (100.0f64 * 200.0).sqrt();
        assert!((up - 0.5).abs() < 3.0 * sigma * 2.0, "{up}");
    }

    #[test]
    fn noiseless_trace_is_pure_telegraph() {
        let (device, pump, cal, law) = fixtures();
        let noise = NoiseConfig::silent();
        let acq = Acquisition { duration: 1.0, sample_rate: 10_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let t = synthesize_trace(scenario, acq, 5).unwrap();
        assert_eq!(t.len(), 10_000);
        assert!(t.i_samples.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(t.q_samples.iter().all(|&v| v == 0.0));
        assert!(t.metadata.oscillating);
    }

    #[test]
    fn white_floor_variance_identity() {
        let (device, pump, cal, law) = fixtures();
        let noise = NoiseConfig {
            rts_amplitude: 0.0,
            white_floor_density: 2e-6,
            quantize: false,
            ..Default::default()
        };
        let acq = Acquisition { duration: 2.0, sample_rate: 100_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let t = synthesize_trace(scenario, acq, 8).unwrap();
        let want = 2e-6 * 100_000.0 / 2.0;
        for ch in [&t.i_samples, &t.q_samples] {
            let m = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!((var / want - 1.0).abs() < 0.02, "{var} vs {want}");
        }
    }

    #[test]
    fn quantized_samples_lie_on_grid() {
        let (device, pump, cal, law) = fixtures();
        let noise = NoiseConfig {
            digitizer_bits: 10,
            digitizer_fullscale: 2.0,
            ..Default::default()
        };
        let acq = Acquisition { duration: 0.05, sample_rate: 100_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let t = synthesize_trace(scenario, acq, 1).unwrap();
        let q = Quantizer { bits: 10, fullscale: 2.0 };
        for &v in t.i_samples.iter().chain(&t.q_samples) {
            let level = (v as f64 + 2.0) / q.step();
            assert!((level - level.round()).abs() < 1e-3, "{v}");
            assert!((0.0..=1023.0).contains(&level.round()));
        }
    }

    #[test]
    fn quantizer_overload_flags_and_clips() {
        let (device, pump, cal, law) = fixtures();
        let noise = NoiseConfig {
            rts_amplitude: 3.0,
            white_floor_density: 0.0,
            digitizer_fullscale: 1.0,
            ..Default::default()
        };
        let acq = Acquisition { duration: 0.01, sample_rate: 100_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let t = synthesize_trace(scenario, acq, 1).unwrap();
        assert!(t.metadata.clipped);
        assert!(t.i_samples.iter().all(|&v| v.abs() <= 1.0));
    }

    #[test]
    fn below_threshold_has_no_telegraph() {
        let (device, _, cal, law) = fixtures();
        let pump = PumpSettings::degenerate(&device, -70.0, 0.35).unwrap();
        let noise = NoiseConfig::silent();
        let acq = Acquisition { duration: 0.1, sample_rate: 10_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let t = synthesize_trace(scenario, acq, 1).unwrap();
        assert!(!t.metadata.oscillating);
        assert!(t.i_samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let (device, pump, cal, law) = fixtures();
        let noise = NoiseConfig {
            one_over_f_density: 1e-4,
            one_over_f_knee: 100.0,
            mains_harmonics: vec![MainsHarmonic { index: 1, amplitude: 0.01 }],
            ..Default::default()
        };
        let acq = Acquisition { duration: 0.2, sample_rate: 20_000.0 };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        let a = synthesize_trace(scenario, acq, 42).unwrap();
        let b = synthesize_trace(scenario, acq, 42).unwrap();
        assert_eq!(a, b);
        let c = synthesize_trace(scenario, acq, 43).unwrap();
        assert_ne!(a.i_samples, c.i_samples);
    }

    #[test]
    fn one_over_f_zero_density_is_identity() {
        let mut s = vec![1.0, 2.0, 3.0];
        inject_one_over_f(&mut s, 0.0, 10.0, 1000.0, 0).unwrap();
        assert_eq!(s, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn one_over_f_variance_matches_quadrature() {
        let (d, knee, fs) = (1e-3, 50.0, 1000.0);
        let mut s = vec![0.0; 400_000];
        inject_one_over_f(&mut s, d, knee, fs, 17).unwrap();
        let shape = FlickerShape::new(d, knee, fs);
        // independent trapezoid quadrature on a log grid
        let density = |f: f64| {
            if f < shape.low_cutoff {
                0.0
            } else if f <= knee {
                d / f
            } else {
                d / knee
            }
        };
        let (a, b) = (shape.low_cutoff, fs / 2.0);
        let steps = 200_000;
        let mut integral = 0.0;
        let r = (b / a).powf(1.0 / steps as f64);
        let mut f = a;
        for _ in 0..steps {
            let g = f * r;
            integral += 0.5 * (density(f) + density(g.min(b))) * (g - f);
            f = g;
        }
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let var = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64;
        assert!((shape.variance() / integral - 1.0).abs() < 1e-3);
        assert!((var / integral - 1.0).abs() < 0.05, "{var} vs {integral}");
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(0, 0), derive_seed(0, 0));
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(0, 1));
    }
}
