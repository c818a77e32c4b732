//! Device physics of the flux-tunable resonator and the oscillator built on it.
//!
//! All frequencies and linewidths are ordinary frequencies in Hz (a value
//! `kappa_ext = 11e6` means κ_ext/2π = 11 MHz). The reflection model and the
//! threshold condition are homogeneous in frequency, so they are evaluated in
//! the same ordinary-Hz units without converting to angular form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnetic flux quantum h/2e in Wb.
pub const FLUX_QUANTUM: f64 = 2.067_833_848e-15;

/// Below this |cos(π Φ/Φ0)| the SQUID inductance is treated as divergent.
const MIN_COS: f64 = 1e-12;

/// Static resonator and junction constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Resonance at zero flux, Hz.
    pub bare_frequency: f64,
    /// Critical current of each junction, A.
    pub critical_current: f64,
    /// External (coupling) linewidth, Hz.
    pub kappa_ext: f64,
    /// Internal loss linewidth, Hz.
    pub kappa_int: f64,
    /// γ0 = L_J(0)/L_r.
    pub inductance_participation: f64,
    #[serde(default = "default_flux_quantum")]
    pub flux_quantum: f64,
}

fn default_flux_quantum() -> f64 {
    FLUX_QUANTUM
}

impl DeviceParams {
    /// The measured device: 6.239 GHz bare resonance, 1.89 µA junctions,
    /// κ_ext = 11 MHz, κ_int = 0.3 MHz, participation calibrated so that
    /// the resonance sits at 5.94 GHz for Φ/Φ0 = 0.35.
    pub fn reference() -> Self {
        let mut p = DeviceParams {
            bare_frequency: 6.239e9,
            critical_current: 1.89e-6,
            kappa_ext: 11e6,
            kappa_int: 0.3e6,
            inductance_participation: 0.05,
            flux_quantum: FLUX_QUANTUM,
        };
        p.inductance_participation =
            calibrate_participation(&p, 0.35, 5.94e9).expect("reference calibration is feasible");
        p
    }

    pub fn kappa_total(&self) -> f64 {
        self.kappa_ext + self.kappa_int
    }

    pub fn validate(&self) -> Result<()> {
        positive("bare_frequency", self.bare_frequency)?;
        positive("critical_current", self.critical_current)?;
        positive("kappa_ext", self.kappa_ext)?;
        if !(self.kappa_int >= 0.0 && self.kappa_int.is_finite()) {
            return Err(Error::invalid("kappa_int", "must be >= 0"));
        }
        let g = self.inductance_participation;
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::invalid("inductance_participation", "must lie in (0, 1)"));
        }
        positive("flux_quantum", self.flux_quantum)
    }
}

pub(crate) fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

/// Pump tone and bias for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSettings {
    /// ω_p/2π, Hz.
    pub pump_frequency: f64,
    pub pump_power_dbm: f64,
    /// Φ_dc/Φ0.
    pub flux_bias: f64,
    /// |f_r(flux) − f_p/2|, Hz. Always derived, never set directly.
    pub detuning: f64,
}

impl PumpSettings {
    pub fn new(
        device: &DeviceParams,
        pump_frequency: f64,
        pump_power_dbm: f64,
        flux_bias: f64,
    ) -> Result<Self> {
        positive("pump_frequency", pump_frequency)?;
        let fr = resonance_frequency(device, flux_bias)?;
        Ok(PumpSettings {
            pump_frequency,
            pump_power_dbm,
            flux_bias,
            detuning: (fr - pump_frequency / 2.0).abs(),
        })
    }

    /// Pump at exactly twice the resonance (zero detuning).
    pub fn degenerate(device: &DeviceParams, pump_power_dbm: f64, flux_bias: f64) -> Result<Self> {
        let fr = resonance_frequency(device, flux_bias)?;
        Self::new(device, 2.0 * fr, pump_power_dbm, flux_bias)
    }

    /// Signal (oscillation) frequency ω_s = ω_p/2.
    pub fn signal_frequency(&self) -> f64 {
        self.pump_frequency / 2.0
    }
}

/// Maps pump power to the effective parametric modulation rate ε (Hz).
///
/// ε is proportional to the pump amplitude: ε = k·sqrt(P / 1 mW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpCalibration {
    pub epsilon_per_sqrt_mw: f64,
}

impl PumpCalibration {
    /// Calibration that places the zero-detuning threshold at `threshold_dbm`.
    pub fn from_threshold(device: &DeviceParams, threshold_dbm: f64) -> Self {
        PumpCalibration {
            epsilon_per_sqrt_mw: device.kappa_total() / 2.0 / dbm_to_mw(threshold_dbm).sqrt(),
        }
    }

    pub fn modulation_rate(&self, pump_power_dbm: f64) -> f64 {
        self.epsilon_per_sqrt_mw * dbm_to_mw(pump_power_dbm).sqrt()
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Phenomenological switching-rate law Γ(P) = Γ0·exp(−α(P − P_ref)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingLaw {
    /// Γ0, Hz.
    pub rate_at_ref: f64,
    pub ref_power_dbm: f64,
    /// α, 1/dB.
    pub slope_per_db: f64,
    /// Model white floor of the phase spectrum, units²/Hz.
    #[serde(default)]
    pub white_floor: f64,
}

impl SwitchingLaw {
    pub fn validate(&self) -> Result<()> {
        positive("rate_at_ref", self.rate_at_ref)?;
        positive("slope_per_db", self.slope_per_db)?;
        if !(self.white_floor >= 0.0) {
            return Err(Error::invalid("white_floor", "must be >= 0"));
        }
        Ok(())
    }

    /// Expected one-sided phase-quadrature spectrum for telegraph
    /// half-separation `amplitude`: 2a²Γ/(Γ² + π²f²) + B.
    pub fn phase_spectrum(&self, pump_power_dbm: f64, amplitude: f64, f: f64) -> f64 {
        let g = switching_rate(self, pump_power_dbm);
        let pi = std::f64::consts::PI;
        2.0 * amplitude * amplitude * g / (g * g + pi * pi * f * f) + self.white_floor
    }
}

/// L_J = Φ0 / (4π I_c |cos(π Φ/Φ0)|).
pub fn josephson_inductance(params: &DeviceParams, flux: f64) -> Result<f64> {
    let c = (std::f64::consts::PI * flux).cos().abs();
    if c < MIN_COS {
        return Err(Error::DivergentInductance { flux });
    }
    Ok(params.flux_quantum / (4.0 * std::f64::consts::PI * params.critical_current * c))
}

/// Lumped participation model normalised to the zero-flux resonance:
/// f_r(Φ) = f_r0·(1 + γ0) / (1 + γ0·L_J(Φ)/L_J(0)).
pub fn resonance_frequency(params: &DeviceParams, flux: f64) -> Result<f64> {
    let ratio = josephson_inductance(params, flux)? / josephson_inductance(params, 0.0)?;
    let g = params.inductance_participation;
    Ok(params.bare_frequency * (1.0 + g) / (1.0 + g * ratio))
}

/// Solves for γ0 so that `resonance_frequency(flux_point) == target_frequency`.
///
/// With x = L_J(Φ)/L_J(0) and r = f_target/f_r0 the model gives the closed form
/// γ0 = (1 − r)/(r·x − 1).
pub fn calibrate_participation(
    params: &DeviceParams,
    flux_point: f64,
    target_frequency: f64,
) -> Result<f64> {
    let bare = params.bare_frequency;
    if !(flux_point.abs() > 0.0 && flux_point.abs() < 0.5) {
        return Err(Error::CalibrationInfeasible(format!(
            "flux point {flux_point} must satisfy 0 < |flux| < 0.5"
        )));
    }
    if !(target_frequency > 0.0 && target_frequency < bare) {
        return Err(Error::CalibrationInfeasible(format!(
            "target {target_frequency} Hz must lie in (0, {bare}) Hz"
        )));
    }
    let x = 1.0 / (std::f64::consts::PI * flux_point).cos().abs();
    let r = target_frequency / bare;
    let denom = r * x - 1.0;
    let gamma = if denom > 0.0 { (1.0 - r) / denom } else { f64::INFINITY };
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::CalibrationInfeasible(format!(
            "no participation in (0, 1) reaches {target_frequency} Hz at flux {flux_point}"
        )));
    }
    Ok(gamma)
}

/// Single-port reflection S11(f) = 1 − κ_ext / (i(f − f_r) + κ_tot/2).
pub fn reflection_coefficient(
    params: &DeviceParams,
    flux: f64,
    probe_frequency: f64,
) -> Result<Complex64> {
    let fr = resonance_frequency(params, flux)?;
    Ok(reflection_at(fr, params.kappa_ext, params.kappa_int, probe_frequency))
}

pub fn reflection_at(resonance: f64, kappa_ext: f64, kappa_int: f64, f: f64) -> Complex64 {
    let denom = Complex64::new((kappa_ext + kappa_int) / 2.0, f - resonance);
    Complex64::new(1.0, 0.0) - kappa_ext / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationState {
    pub oscillating: bool,
    /// Near-threshold pitchfork amplitude sqrt(ε/ε_th − 1), zero below threshold.
    pub steady_amplitude: f64,
    /// ε_th = sqrt(δ² + (κ_tot/2)²), Hz.
    pub threshold: f64,
    /// ε, Hz.
    pub modulation_rate: f64,
}

/// Degenerate parametric threshold test for a given modulation rate.
pub fn oscillation_state(device: &DeviceParams, detuning: f64, modulation_rate: f64) -> OscillationState {
    let half = device.kappa_total() / 2.0;
    let threshold = detuning.hypot(half);
    let oscillating = modulation_rate > threshold;
    let steady_amplitude = if oscillating {
        (modulation_rate / threshold - 1.0).sqrt()
    } else {
        0.0
    };
    OscillationState {
        oscillating,
        steady_amplitude,
        threshold,
        modulation_rate,
    }
}

pub fn oscillation_region(
    device: &DeviceParams,
    pump: &PumpSettings,
    calibration: &PumpCalibration,
) -> OscillationState {
    oscillation_state(
        device,
        pump.detuning,
        calibration.modulation_rate(pump.pump_power_dbm),
    )
}

pub fn switching_rate(law: &SwitchingLaw, pump_power_dbm: f64) -> f64 {
    law.rate_at_ref * (-law.slope_per_db * (pump_power_dbm - law.ref_power_dbm)).exp()
}
