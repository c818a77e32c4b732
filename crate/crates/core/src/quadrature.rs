//! Phase and amplitude noise spectra from the real part of S(ν), diagonalised
//! bin by bin with an ordinary rotation.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::dsp::SpectralMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_IMAG_TOLERANCE: f64 = 0.05;

/// Relative eigenvalue gap below which a bin counts as degenerate.
const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpectra {
    pub frequencies: Vec<f64>,
    /// Larger eigenvalue (phase quadrature).
    pub s_aa: Vec<f64>,
    /// Smaller eigenvalue (amplitude quadrature).
    pub s_bb: Vec<f64>,
    /// Angle of the s_aa eigenvector, unwrapped modulo π across bins.
    pub rotation_angle: Vec<f64>,
    /// |Im s_iq| / sqrt(s_ii·s_qq) per bin.
    pub imag_residual: Vec<f64>,
    pub non_negligible_imaginary: bool,
    /// Standard error of the mean across repeats; empty for a single estimate.
    pub s_aa_err: Vec<f64>,
    pub s_bb_err: Vec<f64>,
    pub resolution_bandwidth: f64,
    /// Welch segments contributing to each bin, summed over repeats.
    pub segment_count: usize,
    pub repeats: usize,
}

impl QuadratureSpectra {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Shifts `angle` by multiples of π to land closest to `reference`.
fn unwrap_half_turn(angle: f64, reference: f64) -> f64 {
    angle + PI * ((reference - angle) / PI).round()
}

/// Eigen-decomposition of the real symmetric matrix [[a, c], [c, d]]:
/// (larger, smaller, angle of the larger eigenvector in (−π/2, π/2]),
/// or `None` for the angle at a degenerate bin.
pub fn symmetric_eigen(a: f64, c: f64, d: f64) -> (f64, f64, Option<f64>) {
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(c);
    let large = mean + radius;
    let det = a * d - c * c;
    // dividing the determinant avoids cancellation in mean − radius
    let small = if large > 0.0 { (det / large).max(0.0) } else { 0.0 };
    let scale = a.abs() + d.abs();
    let angle = if radius <= DEGENERATE_GAP * scale || scale == 0.0 {
        None
    } else {
        Some(0.5 * (2.0 * c).atan2(a - d))
    };
    (large, small, angle)
}

pub fn diagonalize(spec: &SpectralMatrix, imag_tolerance: f64) -> QuadratureSpectra {
    let n = spec.len();
    let mut s_aa = Vec::with_capacity(n);
    let mut s_bb = Vec::with_capacity(n);
    let mut rotation_angle = Vec::with_capacity(n);
    let mut imag_residual = Vec::with_capacity(n);
    let mut previous = 0.0;
    for k in 0..n {
        let (a, d, z) = (spec.s_ii[k], spec.s_qq[k], spec.s_iq[k]);
        let (large, small, angle) = symmetric_eigen(a, z.re, d);
        let theta = match angle {
            Some(t) => unwrap_half_turn(t, previous),
            None => previous,
        };
        previous = theta;
        s_aa.push(large);
        s_bb.push(small);
        rotation_angle.push(theta);
        let floor = (a * d).sqrt();
        imag_residual.push(if floor > 0.0 { z.im.abs() / floor } else { 0.0 });
    }
    // DC carries no fluctuation information once the mean is removed
    let residual_median = median(imag_residual.get(1..).unwrap_or(&[]));
    QuadratureSpectra {
        frequencies: spec.frequencies.clone(),
        s_aa,
        s_bb,
        rotation_angle,
        imag_residual,
        non_negligible_imaginary: residual_median > imag_tolerance,
        s_aa_err: Vec::new(),
        s_bb_err: Vec::new(),
        resolution_bandwidth: spec.resolution_bandwidth,
        segment_count: spec.segment_count,
        repeats: 1,
    }
}

/// Bin-wise mean of repeated spectra with standard errors; angles are
/// averaged on the doubled circle since they are defined modulo π.
pub fn average_spectra(list: &[QuadratureSpectra]) -> Result<QuadratureSpectra> {
    let first = list
        .first()
        .ok_or_else(|| Error::InsufficientData("no spectra to average".into()))?;
    if list.iter().any(|q| q.frequencies != first.frequencies) {
        return Err(Error::GridMismatch);
    }
    let n = list.len() as f64;
    let bins = first.len();
    let mut out = first.clone();
    let stats = |get: &dyn Fn(&QuadratureSpectra) -> f64| {
        let mean = list.iter().map(get).sum::<f64>() / n;
        let err = if list.len() > 1 {
            let var = list.iter().map(|q| (get(q) - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        (mean, err)
    };
    out.s_aa_err = vec![0.0; bins];
    out.s_bb_err = vec![0.0; bins];
    let mut previous = 0.0;
    for k in 0..bins {
        let (m, e) = stats(&|q| q.s_aa[k]);
        out.s_aa[k] = m;
        out.s_aa_err[k] = e;
        let (m, e) = stats(&|q| q.s_bb[k]);
        out.s_bb[k] = m;
        out.s_bb_err[k] = e;
        out.imag_residual[k] = list.iter().map(|q| q.imag_residual[k]).sum::<f64>() / n;
        let (s, c) = list.iter().fold((0.0, 0.0), |(s, c), q| {
            let (ds, dc) = (2.0 * q.rotation_angle[k]).sin_cos();
            (s + ds, c + dc)
        });
        let theta = if s.hypot(c) > 1e-12 * n {
            unwrap_half_turn(0.5 * s.atan2(c), previous)
        } else {
            previous
        };
        out.rotation_angle[k] = theta;
        previous = theta;
    }
    out.non_negligible_imaginary = list.iter().any(|q| q.non_negligible_imaginary);
    out.segment_count = list.iter().map(|q| q.segment_count).sum();
    out.repeats = list.iter().map(|q| q.repeats).sum();
    Ok(out)
}

/// Circular mean (mod π) of the rotation angle over bins in [f_lo, f_hi].
pub fn band_angle(q: &QuadratureSpectra, f_lo: f64, f_hi: f64) -> Option<f64> {
    let (s, c, count) = q
        .frequencies
        .iter()
        .zip(&q.rotation_angle)
        .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
        .fold((0.0, 0.0, 0usize), |(s, c, n), (_, &a)| {
            let (ds, dc) = (2.0 * a).sin_cos();
            (s + ds, c + dc, n + 1)
        });
    (count > 0).then(|| {
        let a = 0.5 * s.atan2(c);
        if a <= -FRAC_PI_2 { a + PI } else { a }
    })
}
