//! Design the 500 → 1 MSa/s decimator and measure what it does to an
//! in-band tone and to an out-of-band tone that would alias into band.

use std::f64::consts::PI;

use jpo_noise::dsp::{apply_stages, design_decimator, DecimationPlan};
use jpo_noise::simulate::{TraceMetadata, TraceRecord};

fn tone_amplitude(x: &[f32], f: f64, fs: f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for (k, &v) in x.iter().enumerate() {
        let ph = 2.0 * PI * f * k as f64 / fs;
        c += v as f64 * ph.cos();
        s += v as f64 * ph.sin();
    }
    2.0 * c.hypot(s) / x.len() as f64
}

fn main() -> jpo_noise::Result<()> {
    let plan = DecimationPlan::digitizer_default();
    let stages = design_decimator(&plan)?;
    for st in &stages {
        let (ripple, stop) = st.measured_bands();
        println!(
            "factor {:>2}: {:>3} taps, ripple {:.4} dB, stopband {:.1} dB",
            st.factor,
            st.taps.len(),
            ripple,
            stop
        );
    }

    let fs = plan.input_rate;
    let n = 5_000_000;
    let make = |f: f64| {
        let i: Vec<f32> = (0..n).map(|k| (2.0 * PI * f * k as f64 / fs).cos() as f32).collect();
        TraceRecord::new(fs, i.clone(), i, TraceMetadata::default())
    };
    let kept = apply_stages(&make(0.3e6)?, &stages)?;
    let a = tone_amplitude(&kept.i_samples[1000..], 0.3e6, kept.sample_rate);
    println!("0.3 MHz tone after decimation: {:.4} dB", 20.0 * a.log10());

    let image = apply_stages(&make(1.3e6)?, &stages)?;
    let b = tone_amplitude(&image.i_samples[1000..], 0.3e6, image.sample_rate);
    println!("1.3 MHz tone aliased to 0.3 MHz: {:.1} dB", 20.0 * b.max(1e-12).log10());
    Ok(())
}
