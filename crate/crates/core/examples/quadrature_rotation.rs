//! A trace whose state axis sits at 0.6 rad in the I/Q plane: the
//! eigen-decomposition recovers the axis and the spectra do not depend on
//! how the digitizer frame was oriented.

use jpo_noise::dsp::{welch_cross_spectrum, WelchSettings};
use jpo_noise::model::{DeviceParams, PumpCalibration, PumpSettings, SwitchingLaw};
use jpo_noise::quadrature::{band_angle, diagonalize, DEFAULT_IMAG_TOLERANCE};
use jpo_noise::simulate::{synthesize_trace, Acquisition, NoiseConfig, Scenario};

fn main() -> jpo_noise::Result<()> {
    let device = DeviceParams::reference();
    let calibration = PumpCalibration::from_threshold(&device, -70.0);
    let pump = PumpSettings::degenerate(&device, -60.0, 0.35)?;
    let law = SwitchingLaw {
        rate_at_ref: 200.0,
        ref_power_dbm: -60.0,
        slope_per_db: 0.5,
        white_floor: 0.0,
    };
    let noise = NoiseConfig {
        quadrature_angle: 0.6,
        one_over_f_density: 1e-5,
        ..NoiseConfig::default()
    };
    let scenario = Scenario {
        device: &device,
        pump: &pump,
        calibration: &calibration,
        law: &law,
        noise: &noise,
    };
    let acq = Acquisition {
        duration: 2.0,
        sample_rate: 100e3,
    };
    let trace = synthesize_trace(scenario, acq, 11)?;
    let welch = WelchSettings {
        segment_length: 1 << 14,
        ..WelchSettings::default()
    };

    let q = diagonalize(&welch_cross_spectrum(&trace, &welch)?, DEFAULT_IMAG_TOLERANCE);
    let angle = band_angle(&q, 0.0, 50.0).unwrap_or(f64::NAN);
    println!("recovered axis {angle:.4} rad (configured 0.6)");

    let turned = trace.rotated(-1.1);
    let q2 = diagonalize(&welch_cross_spectrum(&turned, &welch)?, DEFAULT_IMAG_TOLERANCE);
    println!("{:>10} {:>12} {:>12} {:>12} {:>12}", "f [Hz]", "s_aa", "s_aa rot", "s_bb", "s_bb rot");
    for k in [1, 4, 16, 64, 256, 1024] {
        println!(
            "{:>10.2} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            q.frequencies[k], q.s_aa[k], q2.s_aa[k], q.s_bb[k], q2.s_bb[k]
        );
    }
    Ok(())
}
