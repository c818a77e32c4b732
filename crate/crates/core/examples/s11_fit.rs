//! Fit a noisy synthetic reflection sweep around the flux-tuned resonance.

use jpo_noise::fitting::{fit_s11, LmSettings, S11Guess};
use jpo_noise::model::{reflection_at, DeviceParams};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> jpo_noise::Result<()> {
    let device = DeviceParams::reference();
    let (fr, ke, ki) = (5.94e9, device.kappa_ext, device.kappa_int);
    let freqs: Vec<f64> = (0..801).map(|k| fr - 60e6 + 150e3 * k as f64).collect();

    // 40 dB SNR relative to the unit off-resonance reflection.
    let noise = Normal::new(0.0, 0.01 / 2f64.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<Complex64> = freqs
        .iter()
        .map(|&f| reflection_at(fr, ke, ki, f) + Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();

    let guess = S11Guess::from_data(&freqs, &data).expect("resonance visible");
    let fit = fit_s11(&freqs, &data, &guess, &LmSettings::default())?;
    println!("f_r   {:.6} GHz (true 5.94)", fit.resonance / 1e9);
    println!("κ_ext {:.4} MHz (true 11)", fit.kappa_ext / 1e6);
    println!("κ_int {:.4} MHz (true 0.3)", fit.kappa_int / 1e6);
    println!("rms residual {:.2e}, {} iterations, converged {}", fit.residual_rms, fit.iterations, fit.converged);
    Ok(())
}
