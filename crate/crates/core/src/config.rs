//! TOML run configuration. Unknown keys are rejected and every module
//! invariant is checked at load, with errors naming the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{DecimationPlan, WelchSettings};
use crate::error::{Error, Result};
use crate::fitting::{LmSettings, LorentzianOptions};
use crate::model::{calibrate_participation, DeviceParams, PumpCalibration, PumpSettings, SwitchingLaw};
use crate::simulate::{Acquisition, NoiseConfig};
use crate::switching::{DetectorOptions, Levels, DEFAULT_HYSTERESIS, DEFAULT_MIN_DWELL_SAMPLES};

/// Resonance anchor used to solve for the inductance participation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxAnchor {
    pub flux: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub bare_frequency: f64,
    pub critical_current: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
    /// Either this or `calibration` must be given.
    pub inductance_participation: Option<f64>,
    pub calibration: Option<FluxAnchor>,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = DeviceParams::reference();
        DeviceSection {
            bare_frequency: d.bare_frequency,
            critical_current: d.critical_current,
            kappa_ext: d.kappa_ext,
            kappa_int: d.kappa_int,
            inductance_participation: None,
            calibration: Some(FluxAnchor {
                flux: 0.35,
                frequency: 5.94e9,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    pub flux_bias: f64,
    /// f_p/2 − f_r, Hz.
    pub detuning: f64,
    pub powers_dbm: Vec<f64>,
    /// Pump power at which the zero-detuning threshold is reached.
    pub threshold_dbm: Option<f64>,
    pub epsilon_per_sqrt_mw: Option<f64>,
}

impl Default for PumpSection {
    fn default() -> Self {
        PumpSection {
            flux_bias: 0.35,
            detuning: 0.0,
            powers_dbm: (0..7).map(|k| -64.0 + 2.0 * k as f64).collect(),
            threshold_dbm: Some(-70.0),
            epsilon_per_sqrt_mw: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub duration: f64,
    pub sample_rate: f64,
    /// Independent traces per pump power.
    pub repeats: usize,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let a = Acquisition::default();
        AcquisitionSection {
            duration: a.duration,
            sample_rate: a.sample_rate,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub band_min: Option<f64>,
    pub band_max: Option<f64>,
    /// Explicit mask frequencies, Hz.
    pub mains_mask: Vec<f64>,
    /// Also mask every configured mains harmonic.
    pub mask_mains: bool,
    pub mask_half_width: usize,
    pub groups_per_decade: usize,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    /// Below this Γ_r·T the time-domain count replaces the fit.
    pub min_rate_duration_product: f64,
    pub imag_tolerance: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = LorentzianOptions::default();
        FitSection {
            band_min: o.band_min,
            band_max: o.band_max,
            mains_mask: Vec::new(),
            mask_mains: true,
            mask_half_width: o.mask_half_width,
            groups_per_decade: o.groups_per_decade,
            max_iterations: o.lm.max_iterations,
            gradient_tol: o.lm.gradient_tol,
            step_tol: o.lm.step_tol,
            min_rate_duration_product: 30.0,
            imag_tolerance: crate::quadrature::DEFAULT_IMAG_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchingSection {
    pub hysteresis: f64,
    pub min_dwell_samples: usize,
    /// Boxcar width, s.
    pub smoothing: f64,
}

impl Default for SwitchingSection {
    fn default() -> Self {
        SwitchingSection {
            hysteresis: DEFAULT_HYSTERESIS,
            min_dwell_samples: DEFAULT_MIN_DWELL_SAMPLES,
            smoothing: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneSection {
    /// Grid spans ±detuning_span around zero, Hz.
    pub detuning_span: f64,
    pub detuning_steps: usize,
    pub power_min_dbm: f64,
    pub power_max_dbm: f64,
    pub power_steps: usize,
}

impl Default for PlaneSection {
    fn default() -> Self {
        PlaneSection {
            detuning_span: 40e6,
            detuning_steps: 161,
            power_min_dbm: -80.0,
            power_max_dbm: -50.0,
            power_steps: 121,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub device: DeviceSection,
    pub pump: PumpSection,
    pub law: SwitchingLaw,
    pub noise: NoiseConfig,
    pub acquisition: AcquisitionSection,
    pub welch: WelchSettings,
    pub fit: FitSection,
    pub switching: SwitchingSection,
    pub plane: PlaneSection,
    pub decimation: Option<DecimationPlan>,
    pub seeds: SeedSection,
    /// Copied verbatim into trace metadata.
    pub created_at: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            device: DeviceSection::default(),
            pump: PumpSection::default(),
            law: SwitchingLaw {
                rate_at_ref: 300.0,
                ref_power_dbm: -64.0,
                slope_per_db: 0.5,
                white_floor: 0.0,
            },
            noise: NoiseConfig::default(),
            acquisition: AcquisitionSection::default(),
            welch: WelchSettings::default(),
            fit: FitSection::default(),
            switching: SwitchingSection::default(),
            plane: PlaneSection::default(),
            decimation: None,
            seeds: SeedSection::default(),
            created_at: crate::simulate::TraceMetadata::default().created_at,
        }
    }
}

/// Rewrites a module-level error to carry the config section path.
fn within<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { field, reason } => Error::Config {
            path: format!("{section}.{field}"),
            reason,
        },
        other => Error::Config {
            path: section.to_string(),
            reason: other.to_string(),
        },
    })
}

fn cfg_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            });
            cfg_err(&at.unwrap_or_else(|| "<document>".into()), e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let device = self.device_params()?;
        within("device", device.validate())?;
        within("law", self.law.validate())?;
        within("noise", self.noise.validate())?;
        within("acquisition", self.acquisition().validate())?;
        if self.acquisition.repeats == 0 {
            return Err(cfg_err("acquisition.repeats", "must be >= 1"));
        }
        if self.pump.powers_dbm.is_empty() {
            return Err(cfg_err("pump.powers_dbm", "sweep needs at least one pump power"));
        }
        if let Some(p) = self.pump.powers_dbm.iter().find(|p| !p.is_finite()) {
            return Err(cfg_err("pump.powers_dbm", format!("non-finite power {p}")));
        }
        self.calibration()?;
        for &p in &self.pump.powers_dbm {
            within("pump", self.pump_settings(&device, p).map(|_| ()))?;
        }
        let w = &self.welch;
        if w.segment_length < 2 {
            return Err(cfg_err("welch.segment_length", "must be >= 2"));
        }
        if !(0.0..=0.9).contains(&w.overlap) {
            return Err(cfg_err("welch.overlap", "must lie in [0, 0.9]"));
        }
        let n = crate::simulate::sample_count(self.acquisition.sample_rate, self.acquisition.duration);
        if w.segment_length > n {
            return Err(cfg_err(
                "welch.segment_length",
                format!("{} exceeds the {n}-sample record", w.segment_length),
            ));
        }
        let f = &self.fit;
        if let (Some(lo), Some(hi)) = (f.band_min, f.band_max) {
            if !(lo > 0.0 && hi > lo) {
                return Err(cfg_err("fit.band_max", "band must satisfy 0 < band_min < band_max"));
            }
        }
        if f.groups_per_decade == 0 {
            return Err(cfg_err("fit.groups_per_decade", "must be >= 1"));
        }
        if !(f.gradient_tol > 0.0 && f.step_tol > 0.0) || f.max_iterations == 0 {
            return Err(cfg_err("fit", "tolerances and iteration cap must be positive"));
        }
        if !(0.0..1.0).contains(&self.switching.hysteresis) {
            return Err(cfg_err("switching.hysteresis", "must lie in [0, 1)"));
        }
        if self.switching.min_dwell_samples < 2 {
            return Err(cfg_err("switching.min_dwell_samples", "must be >= 2"));
        }
        if !(self.switching.smoothing >= 0.0) {
            return Err(cfg_err("switching.smoothing", "must be >= 0"));
        }
        let pl = &self.plane;
        if !(pl.detuning_span > 0.0) || pl.detuning_steps < 2 || pl.power_steps < 2 {
            return Err(cfg_err("plane", "needs a positive span and at least 2 steps per axis"));
        }
        if !(pl.power_max_dbm > pl.power_min_dbm) {
            return Err(cfg_err("plane.power_max_dbm", "must exceed power_min_dbm"));
        }
        if let Some(plan) = &self.decimation {
            within("decimation", plan.validate())?;
        }
        Ok(())
    }

    pub fn device_params(&self) -> Result<DeviceParams> {
        let d = &self.device;
        let mut p = DeviceParams {
            bare_frequency: d.bare_frequency,
            critical_current: d.critical_current,
            kappa_ext: d.kappa_ext,
            kappa_int: d.kappa_int,
            inductance_participation: 0.5,
            flux_quantum: crate::model::FLUX_QUANTUM,
        };
        p.inductance_participation = match (d.inductance_participation, d.calibration) {
            (Some(g), None) => g,
            (None, Some(a)) => within("device.calibration", calibrate_participation(&p, a.flux, a.frequency))?,
            _ => {
                return Err(cfg_err(
                    "device",
                    "give exactly one of inductance_participation or [device.calibration]",
                ))
            }
        };
        Ok(p)
    }

    pub fn calibration(&self) -> Result<PumpCalibration> {
        let device = self.device_params()?;
        match (self.pump.threshold_dbm, self.pump.epsilon_per_sqrt_mw) {
            (Some(t), None) if t.is_finite() => Ok(PumpCalibration::from_threshold(&device, t)),
            (None, Some(k)) if k > 0.0 && k.is_finite() => Ok(PumpCalibration { epsilon_per_sqrt_mw: k }),
            _ => Err(cfg_err(
                "pump",
                "give exactly one of threshold_dbm or a positive epsilon_per_sqrt_mw",
            )),
        }
    }

    pub fn pump_settings(&self, device: &DeviceParams, power_dbm: f64) -> Result<PumpSettings> {
        let fr = crate::model::resonance_frequency(device, self.pump.flux_bias)?;
        PumpSettings::new(device, 2.0 * (fr + self.pump.detuning), power_dbm, self.pump.flux_bias)
    }

    pub fn acquisition(&self) -> Acquisition {
        Acquisition {
            duration: self.acquisition.duration,
            sample_rate: self.acquisition.sample_rate,
        }
    }

    /// Mains frequencies to mask in fits.
    pub fn mains_mask(&self) -> Vec<f64> {
        let mut m = self.fit.mains_mask.clone();
        if self.fit.mask_mains {
            m.extend(
                self.noise
                    .mains_harmonics
                    .iter()
                    .map(|h| self.noise.mains_frequency * h.index as f64),
            );
        }
        m
    }

    pub fn lorentzian_options(&self) -> LorentzianOptions {
        LorentzianOptions {
            band_min: self.fit.band_min,
            band_max: self.fit.band_max,
            mains_mask: self.mains_mask(),
            mask_half_width: self.fit.mask_half_width,
            groups_per_decade: self.fit.groups_per_decade,
            lm: LmSettings {
                max_iterations: self.fit.max_iterations,
                gradient_tol: self.fit.gradient_tol,
                step_tol: self.fit.step_tol,
            },
        }
    }

    pub fn detector_options(&self, sample_rate: f64) -> DetectorOptions {
        DetectorOptions {
            axis_angle: 0.0,
            hysteresis: self.switching.hysteresis,
            min_dwell: self.switching.min_dwell_samples as f64 / sample_rate,
            smoothing: self.switching.smoothing,
            levels: Levels::Auto,
        }
    }
}
