//! End-to-end analysis of a pump sweep: Welch → diagonalize → Lorentzian
//! fit, with the time-domain switching count taking over where the fitted
//! corner cannot be resolved from the record.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dsp::{average_spectral_matrices, welch_cross_spectrum, SpectralMatrix, WelchSettings};
use crate::error::{Error, Result};
use crate::fitting::{fit_lorentzian, LorentzianFit, LorentzianOptions, RateMethod, SweepPoint, SweepResult};
use crate::quadrature::{average_spectra, band_angle, diagonalize, QuadratureSpectra};
use crate::simulate::TraceRecord;
use crate::switching::{crosscheck_rates, detect_switches_with, DetectorOptions, RateCrosscheck, SwitchEvents};

/// Low-frequency bins used to orient the state axis.
const AXIS_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub welch: WelchSettings,
    pub fit: LorentzianOptions,
    /// `min_dwell` is replaced per trace by `min_dwell_samples / sample_rate`.
    pub detector: DetectorOptions,
    pub min_dwell_samples: usize,
    pub imag_tolerance: f64,
    pub min_rate_duration_product: f64,
}

impl AnalysisSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        AnalysisSettings {
            welch: cfg.welch,
            fit: cfg.lorentzian_options(),
            detector: cfg.detector_options(cfg.acquisition.sample_rate),
            min_dwell_samples: cfg.switching.min_dwell_samples,
            imag_tolerance: cfg.fit.imag_tolerance,
            min_rate_duration_product: cfg.fit.min_rate_duration_product,
        }
    }
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings::from_config(&RunConfig::default())
    }
}

#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub pump_power_dbm: f64,
    /// Spectral matrix averaged over repeats.
    pub cross: SpectralMatrix,
    /// Diagonalized average, with standard errors across repeats.
    pub spectra: QuadratureSpectra,
    pub fit: Option<LorentzianFit>,
    pub fit_error: Option<String>,
    pub axis_angle: f64,
    /// One entry per repeat when switching was detected.
    pub events: Vec<SwitchEvents>,
    pub detection_error: Option<String>,
    pub crosscheck: Option<RateCrosscheck>,
    /// False when no bistable switching is present.
    pub applicable: bool,
    pub point: SweepPoint,
    /// Duration of one repeat, s.
    pub trace_duration: f64,
}

impl PointAnalysis {
    /// A problem that should make the run exit non-zero, if any.
    pub fn failure(&self) -> Option<String> {
        if !self.applicable {
            return None;
        }
        if let Some(e) = &self.fit_error {
            if self.point.method != RateMethod::Count {
                return Some(format!("{} dBm: fit failed: {e}", self.pump_power_dbm));
            }
        }
        match self.point.method {
            RateMethod::Lorentzian => None,
            RateMethod::Count if self.point.gamma_r.is_some() => None,
            RateMethod::Count => Some(format!("{} dBm: no switching events counted", self.pump_power_dbm)),
            RateMethod::None => Some(format!("{} dBm: no usable rate estimate", self.pump_power_dbm)),
        }
    }
}

/// Analyzes the repeats of one pump power. `load(k)` yields repeat `k`;
/// traces are processed one at a time so only one is held in memory.
pub fn analyze_point_with<F>(repeats: usize, load: F, settings: &AnalysisSettings) -> Result<PointAnalysis>
where
    F: Fn(usize) -> Result<TraceRecord>,
{
    if repeats == 0 {
        return Err(Error::NoInput);
    }
    let mut matrices = Vec::with_capacity(repeats);
    let mut per_repeat = Vec::with_capacity(repeats);
    let mut power = None;
    let mut shape = None;
    let mut events = Vec::new();
    let mut detection_error = None;
    let mut first_angle = None;

    for k in 0..repeats {
        let trace = load(k)?;
        let this_shape = (trace.sample_rate, trace.len());
        if *shape.get_or_insert(this_shape) != this_shape {
            return Err(Error::GridMismatch);
        }
        let p = *power.get_or_insert(trace.metadata.pump_power_dbm);
        if p != trace.metadata.pump_power_dbm {
            return Err(Error::invalid("traces", "repeats of one point must share the pump power"));
        }
        let m = welch_cross_spectrum(&trace, &settings.welch)?;
        let q = diagonalize(&m, settings.imag_tolerance);
        // the state axis comes from the first repeat's low-frequency bins
        let angle = *first_angle.get_or_insert_with(|| {
            let hi = q.frequencies.get(AXIS_BINS.min(q.len() - 1)).copied().unwrap_or(0.0);
            band_angle(&q, q.frequencies.get(1).copied().unwrap_or(0.0), hi).unwrap_or(0.0)
        });
        if detection_error.is_none() {
            let opts = DetectorOptions {
                axis_angle: angle,
                min_dwell: settings.min_dwell_samples as f64 / trace.sample_rate,
                ..settings.detector
            };
            match detect_switches_with(&trace, &opts) {
                Ok(ev) => events.push(ev),
                Err(e) => {
                    detection_error = Some(e.to_string());
                    events.clear();
                }
            }
        }
        matrices.push(m);
        per_repeat.push(q);
    }
    let pump_power_dbm = power.unwrap();
    let (sample_rate, samples) = shape.unwrap();
    let trace_duration = samples as f64 / sample_rate;
    let cross = average_spectral_matrices(&matrices)?;
    drop(matrices);
    let mut spectra = diagonalize(&cross, settings.imag_tolerance);
    if per_repeat.len() > 1 {
        let avg = average_spectra(&per_repeat)?;
        spectra.s_aa_err = avg.s_aa_err;
        spectra.s_bb_err = avg.s_bb_err;
    }
    spectra.repeats = per_repeat.len();
    drop(per_repeat);

    let (mut fit, fit_error) = match fit_lorentzian(&spectra.frequencies, &spectra.s_aa, &settings.fit) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    if let Some(f) = fit.as_mut() {
        if f.corner_rate * trace_duration < settings.min_rate_duration_product {
            f.resolution_limited = true;
        }
    }
    let applicable = detection_error.is_none();
    let total_events: usize = events.iter().map(|e| e.count()).sum();
    let total_time: f64 = events.iter().map(|e| e.duration).sum();
    let count_rate = (applicable && total_time > 0.0).then(|| total_events as f64 / total_time);

    let usable_fit = fit.as_ref().filter(|f| f.converged && !f.resolution_limited);
    let (method, gamma_r, gamma_r_err) = if !applicable {
        (RateMethod::None, None, None)
    } else if let Some(f) = usable_fit {
        (RateMethod::Lorentzian, Some(f.corner_rate), Some(f.corner_rate_err()))
    } else {
        let rate = count_rate.filter(|r| *r > 0.0);
        (
            RateMethod::Count,
            rate,
            rate.map(|_| (total_events as f64).sqrt() / total_time),
        )
    };
    let crosscheck = match (&fit, events.first()) {
        (Some(f), Some(_)) => {
            let mut merged = events[0].clone();
            merged.rate_estimate = count_rate.unwrap_or(0.0);
            Some(crosscheck_rates(f, &merged))
        }
        _ => None,
    };
    let point = SweepPoint {
        pump_power_dbm,
        fit: fit.clone(),
        switch_count_estimate: count_rate,
        switch_count: applicable.then_some(total_events),
        method,
        gamma_r,
        gamma_r_err,
    };
    Ok(PointAnalysis {
        pump_power_dbm,
        cross,
        spectra,
        fit,
        fit_error,
        axis_angle: first_angle.unwrap_or(0.0),
        events,
        detection_error,
        crosscheck,
        applicable,
        point,
        trace_duration,
    })
}

pub fn analyze_point(traces: &[TraceRecord], settings: &AnalysisSettings) -> Result<PointAnalysis> {
    analyze_point_with(traces.len(), |k| Ok(traces[k].clone()), settings)
}

#[derive(Debug, Clone)]
pub struct SweepAnalysis {
    pub points: Vec<PointAnalysis>,
    pub sweep: SweepResult,
    /// Points that could not be analyzed at all, with the reason.
    pub errors: Vec<(f64, String)>,
}

impl SweepAnalysis {
    pub fn failures(&self) -> Vec<String> {
        self.errors
            .iter()
            .map(|(p, e)| format!("{p} dBm: {e}"))
            .chain(self.points.iter().filter_map(|p| p.failure()))
            .collect()
    }
}

/// Analyzes every pump power in parallel; point `p` has `repeats[p]` traces
/// supplied by `load(p, repeat)`.
pub fn analyze_sweep<F>(powers: &[f64], repeats: &[usize], load: F, settings: &AnalysisSettings) -> SweepAnalysis
where
    F: Fn(usize, usize) -> Result<TraceRecord> + Sync,
{
    let results: Vec<Result<PointAnalysis>> = (0..powers.len())
        .into_par_iter()
        .map(|p| analyze_point_with(repeats[p], |r| load(p, r), settings))
        .collect();
    let mut points = Vec::new();
    let mut errors = Vec::new();
    for (p, r) in powers.iter().zip(results) {
        match r {
            Ok(a) => points.push(a),
            Err(e) => errors.push((*p, e.to_string())),
        }
    }
    points.sort_by(|a, b| a.pump_power_dbm.total_cmp(&b.pump_power_dbm));
    let sweep = SweepResult::new(points.iter().map(|p| p.point.clone()).collect());
    SweepAnalysis { points, sweep, errors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceParams, PumpCalibration, PumpSettings, SwitchingLaw};
    use crate::simulate::{synthesize_trace, Acquisition, NoiseConfig, Scenario};

    fn settings() -> AnalysisSettings {
        let mut s = AnalysisSettings::default();
        s.welch.segment_length = 1 << 14;
        s
    }

    fn trace(power: f64, rate: Option<f64>, seed: u64) -> TraceRecord {
        let device = DeviceParams::reference();
        let pump = PumpSettings::degenerate(&device, power, 0.35).unwrap();
        let cal = PumpCalibration::from_threshold(&device, -70.0);
        let law = SwitchingLaw { rate_at_ref: 300.0, ref_power_dbm: -64.0, slope_per_db: 0.5, white_floor: 0.0 };
        let noise = NoiseConfig { rts_rate: rate, white_floor_density: 1e-7, ..Default::default() };
        let scenario = Scenario { device: &device, pump: &pump, calibration: &cal, law: &law, noise: &noise };
        synthesize_trace(scenario, Acquisition { duration: 4.0, sample_rate: 50_000.0 }, seed).unwrap()
    }

    #[test]
    fn resolved_point_uses_lorentzian() {
        let t: Vec<TraceRecord> = (0..2).map(|k| trace(-60.0, Some(100.0), k)).collect();
        let a = analyze_point(&t, &settings()).unwrap();
        assert!(a.applicable);
        assert_eq!(a.point.method, RateMethod::Lorentzian);
        let g = a.point.gamma_r.unwrap();
        assert!((g / 100.0 - 1.0).abs() < 0.15, "{g}");
        let c = a.crosscheck.unwrap();
        assert_eq!(c.consistent, Some(true), "{c:?}");
        assert!(a.failure().is_none());
    }

    #[test]
    fn slow_point_falls_back_to_counting() {
        let t: Vec<TraceRecord> = (0..2).map(|k| trace(-60.0, Some(2.0), 10 + k)).collect();
        let a = analyze_point(&t, &settings()).unwrap();
        assert!(a.fit.as_ref().unwrap().resolution_limited);
        assert_eq!(a.point.method, RateMethod::Count);
        assert!(a.point.gamma_r.unwrap() > 0.0);
    }

    #[test]
    fn below_threshold_is_not_applicable() {
        let t = vec![trace(-75.0, None, 3)];
        let a = analyze_point(&t, &settings()).unwrap();
        assert!(!a.applicable);
        assert_eq!(a.point.method, RateMethod::None);
        assert!(a.failure().is_none());
    }

    #[test]
    fn mixed_powers_rejected() {
        let t = vec![trace(-60.0, Some(50.0), 1), trace(-62.0, Some(50.0), 2)];
        assert!(analyze_point(&t, &settings()).is_err());
    }
}
