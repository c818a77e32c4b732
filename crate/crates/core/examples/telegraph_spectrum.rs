//! Simulate a 50 Hz telegraph on the phase axis, estimate the quadrature
//! spectra and fit the Lorentzian corner.

use jpo_noise::dsp::{segment_for_corner, welch_cross_spectrum, WelchSettings};
use jpo_noise::fitting::{corner_fw, fit_lorentzian, LorentzianOptions};
use jpo_noise::model::{DeviceParams, PumpCalibration, PumpSettings, SwitchingLaw};
use jpo_noise::quadrature::{diagonalize, DEFAULT_IMAG_TOLERANCE};
use jpo_noise::simulate::{synthesize_trace, Acquisition, NoiseConfig, Scenario};

fn main() -> jpo_noise::Result<()> {
    let device = DeviceParams::reference();
    let calibration = PumpCalibration::from_threshold(&device, -70.0);
    let pump = PumpSettings::degenerate(&device, -60.0, 0.35)?;
    let law = SwitchingLaw {
        rate_at_ref: 300.0,
        ref_power_dbm: -64.0,
        slope_per_db: 0.5,
        white_floor: 0.0,
    };
    let noise = NoiseConfig {
        rts_rate: Some(50.0),
        white_floor_density: 1e-6,
        ..NoiseConfig::default()
    };
    let acq = Acquisition {
        duration: 4.0,
        sample_rate: 250e3,
    };
    let scenario = Scenario {
        device: &device,
        pump: &pump,
        calibration: &calibration,
        law: &law,
        noise: &noise,
    };
    let trace = synthesize_trace(scenario, acq, 7)?;

    let welch = WelchSettings {
        segment_length: segment_for_corner(50.0, acq.sample_rate, trace.len()),
        ..WelchSettings::default()
    };
    let spectra = diagonalize(&welch_cross_spectrum(&trace, &welch)?, DEFAULT_IMAG_TOLERANCE);
    let fit = fit_lorentzian(&spectra.frequencies, &spectra.s_aa, &LorentzianOptions::default())?;

    println!("resolution bandwidth  {:.3} Hz", spectra.resolution_bandwidth);
    println!("corner rate  {:.2} ± {:.2} Hz (true 50)", fit.corner_rate, fit.corner_rate_err());
    println!("amplitude    {:.3} (true 2a² = 2)", fit.amplitude);
    println!("white floor  {:.3e} units²/Hz", fit.white_floor);
    println!("f_w          {:.1} Hz", corner_fw(&fit)?);
    println!("converged {}  resolution-limited {}", fit.converged, fit.resolution_limited);
    Ok(())
}
