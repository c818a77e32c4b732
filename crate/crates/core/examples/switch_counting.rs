//! Count telegraph switches directly in the time domain and compare the
//! dwell-time estimate with the spectral one.

use jpo_noise::dsp::{welch_cross_spectrum, WelchSettings};
use jpo_noise::fitting::{fit_lorentzian, LorentzianOptions};
use jpo_noise::model::{DeviceParams, PumpCalibration, PumpSettings, SwitchingLaw};
use jpo_noise::quadrature::{diagonalize, DEFAULT_IMAG_TOLERANCE};
use jpo_noise::simulate::{synthesize_trace, Acquisition, NoiseConfig, Scenario};
use jpo_noise::switching::{crosscheck_rates, detect_switches_with, dwell_statistics, DetectorOptions};

fn main() -> jpo_noise::Result<()> {
    let device = DeviceParams::reference();
    let calibration = PumpCalibration::from_threshold(&device, -70.0);
    let pump = PumpSettings::degenerate(&device, -58.0, 0.35)?;
    let law = SwitchingLaw {
        rate_at_ref: 300.0,
        ref_power_dbm: -64.0,
        slope_per_db: 0.5,
        white_floor: 0.0,
    };
    let noise = NoiseConfig {
        white_floor_density: 1e-5,
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
        duration: 5.0,
        sample_rate: 100e3,
    };
    let trace = synthesize_trace(scenario, acq, 3)?;
    println!("configured rate {:.2} Hz", jpo_noise::model::switching_rate(&law, -58.0));

    let opts = DetectorOptions {
        min_dwell: 1e-4,
        smoothing: 1e-3,
        ..DetectorOptions::default()
    };
    let events = detect_switches_with(&trace, &opts)?;
    println!("{} switches, count rate {:.2} Hz", events.count(), events.rate_estimate);

    let stats = dwell_statistics(&events)?;
    println!(
        "dwell ML rate {:.2} ± {:.2} Hz over {} dwells, KS {:.3}",
        stats.ml_rate, stats.ml_rate_err, stats.dwell_count, stats.ks_statistic
    );

    let welch = WelchSettings {
        segment_length: 1 << 17,
        ..WelchSettings::default()
    };
    let q = diagonalize(&welch_cross_spectrum(&trace, &welch)?, DEFAULT_IMAG_TOLERANCE);
    let fit = fit_lorentzian(&q.frequencies, &q.s_aa, &LorentzianOptions::default())?;
    let check = crosscheck_rates(&fit, &events);
    match (check.fit_rate, check.consistent) {
        (Some(f), Some(ok)) => println!("spectral {f:.2} Hz vs count {:.2} Hz, consistent {ok}", check.count_rate),
        _ => println!("spectral fit unusable, count {:.2} Hz", check.count_rate),
    }
    Ok(())
}
