//! Calibrate the inductance participation from one flux anchor, then
//! tabulate the tuning curve and the parametric threshold along it.

use jpo_noise::model::{
    calibrate_participation, josephson_inductance, oscillation_state, resonance_frequency, DeviceParams,
    PumpCalibration,
};

fn main() -> jpo_noise::Result<()> {
    let mut device = DeviceParams::reference();
    device.inductance_participation = calibrate_participation(&device, 0.35, 5.94e9)?;
    println!("γ0 = {:.6}", device.inductance_participation);

    let cal = PumpCalibration::from_threshold(&device, -70.0);
    let eps = cal.modulation_rate(-60.0);
    let fp = 2.0 * resonance_frequency(&device, 0.35)?;
    println!("pump fixed at {:.4} GHz, -60 dBm", fp / 1e9);
    println!("{:>6} {:>12} {:>12} {:>14} {:>6}", "Φ/Φ0", "L_J [nH]", "f_r [GHz]", "ε_th [MHz]", "osc.");
    for k in 0..=10 {
        let flux = 0.035 * k as f64;
        let lj = josephson_inductance(&device, flux)?;
        let fr = resonance_frequency(&device, flux)?;
        let st = oscillation_state(&device, fr - fp / 2.0, eps);
        println!(
            "{:>6.2} {:>12.5} {:>12.6} {:>14.3} {:>6}",
            flux,
            lj * 1e9,
            fr / 1e9,
            st.threshold / 1e6,
            st.oscillating
        );
    }
    Ok(())
}
