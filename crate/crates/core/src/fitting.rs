//! Least-squares estimators: the generalized Lorentzian of the phase noise
//! spectrum, its white-noise corner f_w, the exponential switching-rate trend
//! across pump power, and the single-port S11 resonance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reflection_at, resonance_frequency, DeviceParams, SwitchingLaw};

/// A residual vector with an analytic Jacobian.
pub trait LeastSquares {
    fn residual_count(&self) -> usize;
    fn param_count(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Row-major m×n Jacobian ∂r_i/∂p_j.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);
    /// Keeps parameters inside their feasible set after a step.
    fn project(&self, _params: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Max cosine between the residual and any Jacobian column.
    pub gradient_tol: f64,
    /// Relative step size.
    pub step_tol: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iterations: 200,
            gradient_tol: 1e-8,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// ½Σr².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (JᵀJ)⁻¹ at the solution, if invertible.
    pub jtj_inverse: Option<DMatrix<f64>>,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn scaled_gradient(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    (0..j.ncols())
        .map(|c| {
            let col = j.column(c);
            let cn = col.norm();
            if cn == 0.0 {
                0.0
            } else {
                col.dot(r).abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Damped Gauss–Newton with Marquardt diagonal scaling.
pub fn levenberg_marquardt<P: LeastSquares>(problem: &P, start: &[f64], settings: &LmSettings) -> LmOutcome {
    let (m, n) = (problem.residual_count(), problem.param_count());
    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; m];

    while iterations < settings.max_iterations {
        iterations += 1;
        problem.jacobian(&p, &mut jac);
        let rv = DVector::from_column_slice(&r);
        if scaled_gradient(&jac, &rv) <= settings.gradient_tol {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        let max_diag = (0..n).map(|k| jtj[(k, k)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * max_diag);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut cand);
            problem.residuals(&cand, &mut trial);
            let new_cost = cost_of(&trial);
            if new_cost.is_finite() && new_cost <= cost {
                let moved: f64 = cand.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let size: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                p = cand;
                std::mem::swap(&mut r, &mut trial);
                let relative_drop = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if moved <= settings.step_tol * (size + settings.step_tol) || (cost == 0.0) || relative_drop < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent possible at any damping: stationary to working precision
            converged = scaled_gradient(&jac, &DVector::from_column_slice(&r)) <= 1e-5;
            break;
        }
        if converged {
            break;
        }
    }
    problem.jacobian(&p, &mut jac);
    let jtj_inverse = (jac.transpose() * &jac).try_inverse();
    LmOutcome {
        params: p,
        cost,
        iterations,
        converged,
        jtj_inverse,
    }
}

/// S(f) = A·Γ/(π²f² + Γ²) + B.
pub fn lorentzian(f: f64, amplitude: f64, corner_rate: f64, white_floor: f64) -> f64 {
    amplitude * corner_rate / (PI * PI * f * f + corner_rate * corner_rate) + white_floor
}

/// Gradient of the model with respect to (ln A, ln Γ, ln B).
fn lorentzian_log_gradient(f: f64, a: f64, g: f64, b: f64) -> [f64; 3] {
    let w = PI * PI * f * f;
    let den = w + g * g;
    [a * g / den, a * g * (w - g * g) / (den * den), b]
}

/// One log-spaced frequency group of raw Welch bins.
#[derive(Debug, Clone)]
pub struct FitGroup {
    pub frequencies: Vec<f64>,
    pub mean_value: f64,
}

/// Relative-error Lorentzian objective over grouped bins, parameters
/// (ln A, ln Γ, ln B).
#[derive(Debug, Clone)]
pub struct LorentzianProblem {
    pub groups: Vec<FitGroup>,
}

impl LorentzianProblem {
    fn group_model(g: &FitGroup, a: f64, gamma: f64, b: f64) -> f64 {
        g.frequencies.iter().map(|&f| lorentzian(f, a, gamma, b)).sum::<f64>() / g.frequencies.len() as f64
    }
}

impl LeastSquares for LorentzianProblem {
    fn residual_count(&self) -> usize {
        self.groups.len()
    }

    fn param_count(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (a, g, b) = (p[0].exp(), p[1].exp(), p[2].exp());
        for (o, grp) in out.iter_mut().zip(&self.groups) {
            let w = (grp.frequencies.len() as f64).sqrt() / grp.mean_value;
            *o = w * (Self::group_model(grp, a, g, b) - grp.mean_value);
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (a, g, b) = (p[0].exp(), p[1].exp(), p[2].exp());
        for (row, grp) in self.groups.iter().enumerate() {
            let n = grp.frequencies.len() as f64;
            let w = n.sqrt() / grp.mean_value;
            let mut acc = [0.0; 3];
            for &f in &grp.frequencies {
                let d = lorentzian_log_gradient(f, a, g, b);
                for k in 0..3 {
                    acc[k] += d[k];
                }
            }
            for k in 0..3 {
                out[(row, k)] = w * acc[k] / n;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorentzianOptions {
    /// Fit band in Hz; `None` ends use one resolution bandwidth and 90% of Nyquist.
    pub band_min: Option<f64>,
    pub band_max: Option<f64>,
    /// Frequencies excluded together with ±`mask_half_width` bins.
    pub mains_mask: Vec<f64>,
    pub mask_half_width: usize,
    pub groups_per_decade: usize,
    pub lm: LmSettings,
}

impl Default for LorentzianOptions {
    fn default() -> Self {
        LorentzianOptions {
            band_min: None,
            band_max: None,
            mains_mask: Vec::new(),
            mask_half_width: 2,
            groups_per_decade: 20,
            lm: LmSettings::default(),
        }
    }
}

pub const MIN_FIT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// A, units²·Hz.
    pub amplitude: f64,
    /// Γ_r, Hz.
    pub corner_rate: f64,
    /// B, units²/Hz.
    pub white_floor: f64,
    pub f_w: Option<f64>,
    /// Covariance of (A, Γ_r, B).
    pub covariance: [[f64; 3]; 3],
    pub fit_band: (f64, f64),
    /// RMS of the weighted relative residuals.
    pub residual_norm: f64,
    pub converged: bool,
    /// Γ_r fell below the resolution bandwidth of the spectrum.
    pub resolution_limited: bool,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn value(&self, f: f64) -> f64 {
        lorentzian(f, self.amplitude, self.corner_rate, self.white_floor)
    }

    pub fn corner_rate_err(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }

    /// Standard error of f_w by propagation through ln f_w = ½(ln A + ln Γ − ln B).
    pub fn f_w_err(&self) -> Option<f64> {
        let fw = self.f_w?;
        let p = [self.amplitude, self.corner_rate, self.white_floor];
        let v = [0.5, 0.5, -0.5];
        let mut var = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                var += v[i] * v[j] * self.covariance[i][j] / (p[i] * p[j]);
            }
        }
        Some(fw * var.max(0.0).sqrt())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits S(f) = AΓ/(π²f² + Γ²) + B to a one-sided spectrum on a uniform grid.
pub fn fit_lorentzian(frequencies: &[f64], psd: &[f64], opts: &LorentzianOptions) -> Result<LorentzianFit> {
    if frequencies.len() != psd.len() || frequencies.len() < 2 {
        return Err(Error::invalid("psd", "frequency and value arrays must match"));
    }
    let rbw = frequencies[1] - frequencies[0];
    let top = *frequencies.last().unwrap();
    let lo = opts.band_min.unwrap_or(rbw);
    let hi = opts.band_max.unwrap_or(0.9 * top);
    if !(lo > 0.0 && hi > lo && lo >= frequencies[0] && hi <= top) {
        return Err(Error::invalid("band", format!("({lo}, {hi}) Hz is not inside the spectrum grid")));
    }
    let masked = |f: f64| {
        opts.mains_mask
            .iter()
            .any(|&m| ((f - m) / rbw).abs().round() <= opts.mask_half_width as f64)
    };
    let bins: Vec<(f64, f64)> = frequencies
        .iter()
        .zip(psd)
        .filter(|(f, v)| **f >= lo && **f <= hi && **f > 0.0 && **v > 0.0 && !masked(**f))
        .map(|(f, v)| (*f, *v))
        .collect();
    if bins.len() < MIN_FIT_BINS {
        return Err(Error::InsufficientData(format!(
            "{} unmasked bins in band, need {MIN_FIT_BINS}",
            bins.len()
        )));
    }

    // log-spaced groups
    let per_decade = opts.groups_per_decade.max(1) as f64;
    let mut groups: Vec<FitGroup> = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut current_edge = None;
    for &(f, v) in &bins {
        let edge = ((f / lo).log10() * per_decade).floor() as i64;
        if current_edge != Some(edge) && !current.is_empty() {
            groups.push(make_group(&current));
            current.clear();
        }
        current_edge = Some(edge);
        current.push((f, v));
    }
    if !current.is_empty() {
        groups.push(make_group(&current));
    }

    // deterministic start
    let b0 = median(&mut bins.iter().filter(|(f, _)| *f >= hi / 10.0).map(|(_, v)| *v).collect::<Vec<_>>());
    let p0 = median(&mut bins.iter().take(5).map(|(_, v)| *v).collect::<Vec<_>>());
    let excess = (p0 - b0).max(1e-3 * b0.max(1e-300));
    let half = b0 + 0.5 * excess;
    let f_half = groups
        .iter()
        .find(|g| g.mean_value < half)
        .map(|g| g.frequencies[0])
        .unwrap_or(hi);
    let gamma0 = PI * f_half;
    let start = [(excess * gamma0).ln(), gamma0.ln(), b0.max(1e-300).ln()];
    let plateau_visible = p0 > 1.5 * b0;

    let problem = LorentzianProblem { groups };
    let out = levenberg_marquardt(&problem, &start, &opts.lm);
    let (a, g, b) = (out.params[0].exp(), out.params[1].exp(), out.params[2].exp());
    let m = problem.residual_count();
    let dof = (m as f64 - 3.0).max(1.0);
    let scale = 2.0 * out.cost / dof;
    let lin = [a, g, b];
    let mut covariance = [[f64::NAN; 3]; 3];
    if let Some(inv) = &out.jtj_inverse {
        for i in 0..3 {
            for j in 0..3 {
                covariance[i][j] = inv[(i, j)] * scale * lin[i] * lin[j];
            }
        }
    }
    let converged = out.converged && plateau_visible && out.jtj_inverse.is_some();
    Ok(LorentzianFit {
        amplitude: a,
        corner_rate: g,
        white_floor: b,
        f_w: (b > 0.0).then(|| (a * g / b).sqrt() / PI),
        covariance,
        fit_band: (lo, hi),
        residual_norm: (2.0 * out.cost / m as f64).sqrt(),
        converged,
        resolution_limited: g < rbw,
        iterations: out.iterations,
    })
}

fn make_group(bins: &[(f64, f64)]) -> FitGroup {
    FitGroup {
        frequencies: bins.iter().map(|b| b.0).collect(),
        mean_value: bins.iter().map(|b| b.1).sum::<f64>() / bins.len() as f64,
    }
}

/// Frequency where the 1/f² asymptote AΓ/(π²f²) meets the floor B.
pub fn corner_fw(fit: &LorentzianFit) -> Result<f64> {
    if !fit.converged {
        return Err(Error::invalid("fit", "corner frequency needs a converged fit"));
    }
    if !(fit.white_floor > 0.0) {
        return Err(Error::UndefinedCorner);
    }
    Ok((fit.amplitude * fit.corner_rate / fit.white_floor).sqrt() / PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTrend {
    /// Γ0 at `ref_power_dbm`, Hz.
    pub rate_at_ref: f64,
    /// α, 1/dB.
    pub slope_per_db: f64,
    pub ref_power_dbm: f64,
    /// Covariance of (Γ0, α).
    pub covariance: [[f64; 2]; 2],
}

impl ExpTrend {
    pub fn rate(&self, pump_power_dbm: f64) -> f64 {
        self.rate_at_ref * (-self.slope_per_db * (pump_power_dbm - self.ref_power_dbm)).exp()
    }

    pub fn as_law(&self) -> SwitchingLaw {
        SwitchingLaw {
            rate_at_ref: self.rate_at_ref,
            ref_power_dbm: self.ref_power_dbm,
            slope_per_db: self.slope_per_db,
            white_floor: 0.0,
        }
    }
}

/// Weighted linear least squares of ln(rate) against pump power, with the
/// reference power pinned at the lowest measured power. `weights` are
/// inverse variances of ln(rate); `None` weights all points equally.
pub fn fit_exponential_trend(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<ExpTrend> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points, exponential trend needs at least 3",
            points.len()
        )));
    }
    if let Some(&(p, r)) = points.iter().find(|(_, r)| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::invalid("rate", format!("non-positive rate {r} at {p} dBm")));
    }
    if weights.is_some_and(|w| w.len() != points.len() || w.iter().any(|&v| !(v > 0.0))) {
        return Err(Error::invalid("weights", "need one positive weight per point"));
    }
    let ref_power = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &(p, r)) in points.iter().enumerate() {
        let (x, y, wi) = (p - ref_power, r.ln(), w(i));
        sw += wi;
        sx += wi * x;
        sy += wi * y;
        sxx += wi * x * x;
        sxy += wi * x * y;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::invalid("points", "pump powers must not all coincide"));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let n = points.len() as f64;
    let chi2: f64 = points
        .iter()
        .enumerate()
        .map(|(i, &(p, r))| w(i) * (r.ln() - intercept - slope * (p - ref_power)).powi(2))
        .sum();
    let s2 = chi2 / (n - 2.0);
    let (v_cc, v_ss, v_cs) = (s2 * sxx / det, s2 * sw / det, -s2 * sx / det);
    let g0 = intercept.exp();
    Ok(ExpTrend {
        rate_at_ref: g0,
        slope_per_db: -slope,
        ref_power_dbm: ref_power,
        covariance: [[g0 * g0 * v_cc, -g0 * v_cs], [-g0 * v_cs, v_ss]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S11Guess {
    pub resonance: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
}

impl S11Guess {
    pub fn from_device(device: &DeviceParams, flux: f64) -> Result<Self> {
        Ok(S11Guess {
            resonance: resonance_frequency(device, flux)?,
            kappa_ext: device.kappa_ext,
            kappa_int: device.kappa_int,
        })
    }

    /// Estimates from the reflection circle: the resonance is the point
    /// farthest from 1, and |1 − S11|² has full width κ_tot at half maximum.
    pub fn from_data(freqs: &[f64], s11: &[Complex64]) -> Option<Self> {
        let depth: Vec<f64> = s11.iter().map(|s| (Complex64::new(1.0, 0.0) - s).norm()).collect();
        let (imax, &dmax) = depth.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        if !(dmax > 1e-6) {
            return None;
        }
        let half = dmax / 2f64.sqrt();
        let left = (0..imax).rev().find(|&k| depth[k] < half).map(|k| freqs[k])?;
        let right = (imax..depth.len()).find(|&k| depth[k] < half).map(|k| freqs[k])?;
        let kappa = right - left;
        let kappa_ext = (dmax * kappa / 2.0).min(kappa);
        Some(S11Guess {
            resonance: freqs[imax],
            kappa_ext,
            kappa_int: (kappa - kappa_ext).max(0.0),
        })
    }
}

/// Complex residuals of S11 stacked as (Re, Im), parameters scaled as
/// ((f_r − f0)/s, κ_ext/s, κ_int/s).
#[derive(Debug, Clone)]
pub struct S11Problem {
    pub freqs: Vec<f64>,
    pub data: Vec<Complex64>,
    pub origin: f64,
    pub scale: f64,
}

impl S11Problem {
    pub fn unscale(&self, p: &[f64]) -> (f64, f64, f64) {
        (self.origin + p[0] * self.scale, p[1] * self.scale, p[2] * self.scale)
    }
}

impl LeastSquares for S11Problem {
    fn residual_count(&self) -> usize {
        2 * self.freqs.len()
    }

    fn param_count(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (fr, ke, ki) = self.unscale(p);
        for (k, (&f, d)) in self.freqs.iter().zip(&self.data).enumerate() {
            let e = reflection_at(fr, ke, ki, f) - d;
            out[2 * k] = e.re;
            out[2 * k + 1] = e.im;
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (fr, ke, ki) = self.unscale(p);
        let s = self.scale;
        for (k, &f) in self.freqs.iter().enumerate() {
            let d = Complex64::new((ke + ki) / 2.0, f - fr);
            let d2 = d * d;
            let dfr = Complex64::new(0.0, -ke) / d2;
            let dke = -1.0 / d + ke / (2.0 * d2);
            let dki = ke / (2.0 * d2);
            for (c, v) in [dfr, dke, dki].into_iter().enumerate() {
                out[(2 * k, c)] = v.re * s;
                out[(2 * k + 1, c)] = v.im * s;
            }
        }
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].max(1e-9);
        p[2] = p[2].max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S11Fit {
    pub resonance: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
    /// Covariance of (f_r, κ_ext, κ_int), Hz².
    pub covariance: [[f64; 3]; 3],
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn fit_s11(freqs: &[f64], s11: &[Complex64], initial: &S11Guess, lm: &LmSettings) -> Result<S11Fit> {
    if freqs.len() != s11.len() || freqs.len() < 8 {
        return Err(Error::InsufficientData("need at least 8 matching S11 points".into()));
    }
    let span = freqs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - freqs.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = initial.kappa_ext + initial.kappa_int;
    if !(kappa > 0.0) || span < 5.0 * kappa {
        return Err(Error::invalid(
            "freqs",
            format!("span {span} Hz is narrower than 5 linewidths ({} Hz)", 5.0 * kappa),
        ));
    }
    let problem = S11Problem {
        freqs: freqs.to_vec(),
        data: s11.to_vec(),
        origin: initial.resonance,
        scale: kappa,
    };
    let start = [0.0, initial.kappa_ext / kappa, initial.kappa_int / kappa];
    let out = levenberg_marquardt(&problem, &start, lm);
    let (fr, ke, ki) = problem.unscale(&out.params);
    let m = problem.residual_count();
    let residual_rms = (2.0 * out.cost / m as f64).sqrt();
    let scale = 2.0 * out.cost / (m as f64 - 3.0).max(1.0) * kappa * kappa;
    let mut covariance = [[f64::NAN; 3]; 3];
    if let Some(inv) = &out.jtj_inverse {
        for i in 0..3 {
            for j in 0..3 {
                covariance[i][j] = inv[(i, j)] * scale;
            }
        }
    }
    // a real resonance must stand out of the residual noise inside the span
    let depth = freqs
        .iter()
        .map(|&f| (Complex64::new(1.0, 0.0) - reflection_at(fr, ke, ki, f)).norm())
        .fold(0.0, f64::max);
    let (fmin, fmax) = (freqs[0].min(freqs[freqs.len() - 1]), freqs[0].max(freqs[freqs.len() - 1]));
    let converged = out.converged && depth > 5.0 * residual_rms && depth > 1e-6 && fr >= fmin && fr <= fmax;
    Ok(S11Fit {
        resonance: fr,
        kappa_ext: ke,
        kappa_int: ki,
        covariance,
        residual_rms,
        converged,
        iterations: out.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMethod {
    /// Corner of the Lorentzian fit.
    Lorentzian,
    /// Time-domain switching count.
    Count,
    /// No bistable switching present.
    None,
}

impl RateMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RateMethod::Lorentzian => "lorentzian",
            RateMethod::Count => "count",
            RateMethod::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pump_power_dbm: f64,
    pub fit: Option<LorentzianFit>,
    /// Per-state switching rate from counting events, Hz.
    pub switch_count_estimate: Option<f64>,
    pub switch_count: Option<usize>,
    pub method: RateMethod,
    /// Γ_r reported for this point, by `method`.
    pub gamma_r: Option<f64>,
    pub gamma_r_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by pump power.
    pub points: Vec<SweepPoint>,
    pub exp_fit: Option<ExpTrend>,
    pub fw_exp_fit: Option<ExpTrend>,
}

impl SweepResult {
    pub fn new(mut points: Vec<SweepPoint>) -> Self {
        points.sort_by(|a, b| a.pump_power_dbm.total_cmp(&b.pump_power_dbm));
        let rated: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.gamma_r.map(|g| (p.pump_power_dbm, g)))
            .collect();
        let fw: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| {
                let f = p.fit.as_ref().filter(|f| f.converged && !f.resolution_limited)?;
                (p.method == RateMethod::Lorentzian).then_some((p.pump_power_dbm, f.f_w?))
            })
            .collect();
        SweepResult {
            exp_fit: fit_exponential_trend(&rated, None).ok(),
            fw_exp_fit: fit_exponential_trend(&fw, None).ok(),
            points,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model_spectrum(a: f64, g: f64, b: f64, df: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let f: Vec<f64> = (0..n).map(|k| k as f64 * df).collect();
        let v = f.iter().map(|&x| lorentzian(x, a, g, b)).collect();
        (f, v)
    }

    #[test]
    fn lorentzian_recovers_noiseless_parameters() {
        let (f, v) = model_spectrum(2.0, 100.0, 1e-6, 1.0, 50_001);
        let fit = fit_lorentzian(&f, &v, &LorentzianOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.amplitude / 2.0 - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.corner_rate / 100.0 - 1.0).abs() < 1e-3);
        assert!((fit.white_floor / 1e-6 - 1.0).abs() < 1e-3);
        assert!(!fit.resolution_limited);
    }

    #[test]
    fn lorentzian_at_zero_frequency() {
        assert_eq!(lorentzian(0.0, 2.0, 100.0, 1e-6), 2.0 / 100.0 + 1e-6);
    }

    #[test]
    fn too_few_bins() {
        let (f, v) = model_spectrum(2.0, 100.0, 1e-6, 1.0, 15);
        assert!(matches!(
            fit_lorentzian(&f, &v, &LorentzianOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mask_robustness() {
        let (f, mut v) = model_spectrum(2.0, 100.0, 1e-5, 1.0, 20_001);
        let clean = fit_lorentzian(&f, &v, &LorentzianOptions::default()).unwrap();
        let mains: Vec<f64> = (1..=20).map(|h| 50.0 * h as f64).collect();
        for &m in &mains {
            v[m as usize] *= 1e3;
        }
        let opts = LorentzianOptions {
            mains_mask: mains,
            ..Default::default()
        };
        let spiked = fit_lorentzian(&f, &v, &opts).unwrap();
        for (a, b) in [
            (clean.amplitude, spiked.amplitude),
            (clean.corner_rate, spiked.corner_rate),
            (clean.white_floor, spiked.white_floor),
        ] {
            assert!((a / b - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn resolution_limited_flag() {
        // Γ = 0.5 Hz on a 1 Hz grid
        let (f, v) = model_spectrum(0.02, 0.5, 1e-6, 1.0, 5001);
        let fit = fit_lorentzian(&f, &v, &LorentzianOptions::default()).unwrap();
        assert!(fit.resolution_limited);
    }

    #[test]
    fn fw_closed_form() {
        let fit = LorentzianFit {
            amplitude: 2.0,
            corner_rate: 100.0,
            white_floor: 2e-3,
            f_w: None,
            covariance: [[0.0; 3]; 3],
            fit_band: (1.0, 10.0),
            residual_norm: 0.0,
            converged: true,
            resolution_limited: false,
            iterations: 0,
        };
        let fw = corner_fw(&fit).unwrap();
        assert!((fw - 1e5f64.sqrt() / PI).abs() < 1e-9);
        assert!((fw - 100.658).abs() < 1e-3);
        // numeric intersection of the asymptote with the floor by bisection
        let (mut lo, mut hi) = (1.0f64, 1e4f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if 2.0 * 100.0 / (PI * PI * mid * mid) > 2e-3 { lo = mid } else { hi = mid }
        }
        assert!((fw - lo).abs() < 1e-9 * fw);
        let quad = LorentzianFit { white_floor: 8e-3, ..fit.clone() };
        assert!((corner_fw(&quad).unwrap() - fw / 2.0).abs() < 1e-12);
        let asym = fit.amplitude * fit.corner_rate / (PI * PI * fw * fw);
        assert!((asym - fit.white_floor).abs() < 1e-15);
        let zero = LorentzianFit { white_floor: 0.0, ..fit };
        assert!(matches!(corner_fw(&zero), Err(Error::UndefinedCorner)));
    }

    #[test]
    fn exponential_trend_exact() {
        let law = SwitchingLaw { rate_at_ref: 300.0, ref_power_dbm: -64.0, slope_per_db: 0.5, white_floor: 0.0 };
        let pts: Vec<(f64, f64)> = (0..7).map(|k| {
            let p = -64.0 + 2.0 * k as f64;
            (p, crate::model::switching_rate(&law, p))
        }).collect();
        let t = fit_exponential_trend(&pts, None).unwrap();
        assert!((t.rate_at_ref - 300.0).abs() < 1e-9);
        assert!((t.slope_per_db - 0.5).abs() < 1e-12);
        assert_eq!(t.ref_power_dbm, -64.0);
        assert!(fit_exponential_trend(&pts[..2], None).is_err());
        let mut bad = pts.clone();
        bad[3].1 = 0.0;
        assert!(fit_exponential_trend(&bad, None).is_err());
    }

    fn synthetic_s11(fr: f64, ke: f64, ki: f64, n: usize) -> (Vec<f64>, Vec<Complex64>) {
        let span = 10.0 * (ke + ki);
        let f: Vec<f64> = (0..n).map(|k| fr - span / 2.0 + span * k as f64 / (n - 1) as f64).collect();
        let s = f.iter().map(|&x| reflection_at(fr, ke, ki, x)).collect();
        (f, s)
    }

    #[test]
    fn s11_noiseless_recovery() {
        let (f, s) = synthetic_s11(5.94e9, 11e6, 0.3e6, 801);
        let guess = S11Guess { resonance: 5.9405e9, kappa_ext: 9e6, kappa_int: 1e6 };
        let fit = fit_s11(&f, &s, &guess, &LmSettings::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.resonance - 5.94e9).abs() < 1e-3 * 11e6);
        assert!((fit.kappa_ext / 11e6 - 1.0).abs() < 1e-3);
        assert!((fit.kappa_int / 0.3e6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn s11_guess_from_data() {
        let (f, s) = synthetic_s11(5.94e9, 11e6, 0.3e6, 2001);
        let g = S11Guess::from_data(&f, &s).unwrap();
        assert!((g.resonance - 5.94e9).abs() < 1e5);
        assert!((g.kappa_ext + g.kappa_int) / 11.3e6 > 0.9);
    }

    #[test]
    fn s11_lossless_limit() {
        let (f, s) = synthetic_s11(5.94e9, 11e6, 0.0, 801);
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let guess = S11Guess { resonance: 5.94e9, kappa_ext: 10e6, kappa_int: 0.5e6 };
        let fit = fit_s11(&f, &s, &guess, &LmSettings::default()).unwrap();
        assert!(fit.kappa_int <= 1e-3 * fit.kappa_ext, "{fit:?}");
    }

    #[test]
    fn s11_span_precondition() {
        let (f, s) = synthetic_s11(5.94e9, 11e6, 0.3e6, 101);
        let guess = S11Guess { resonance: 5.94e9, kappa_ext: 50e6, kappa_int: 0.3e6 };
        assert!(fit_s11(&f, &s, &guess, &LmSettings::default()).is_err());
    }

    #[test]
    fn s11_flat_response_not_converged() {
        let f: Vec<f64> = (0..401).map(|k| 5.9e9 + k as f64 * 2e5).collect();
        let s = vec![Complex64::new(1.0, 0.0); f.len()];
        assert!(S11Guess::from_data(&f, &s).is_none());
        let guess = S11Guess { resonance: 5.94e9, kappa_ext: 5e6, kappa_int: 0.3e6 };
        let fit = fit_s11(&f, &s, &guess, &LmSettings::default()).unwrap();
        assert!(!fit.converged);
    }

    fn fd_check<P: LeastSquares>(problem: &P, p: &[f64]) -> f64 {
        let (m, n) = (problem.residual_count(), problem.param_count());
        let mut jac = DMatrix::zeros(m, n);
        problem.jacobian(p, &mut jac);
        let mut worst: f64 = 0.0;
        let (mut rp, mut rm) = (vec![0.0; m], vec![0.0; m]);
        for c in 0..n {
            let h = 1e-5 * p[c].abs().max(1.0);
            let mut plus = p.to_vec();
            let mut minus = p.to_vec();
            plus[c] += h;
            minus[c] -= h;
            problem.residuals(&plus, &mut rp);
            problem.residuals(&minus, &mut rm);
            // rounding in the difference scales with the residual size
            let r_norm = rp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let col_norm = (0..m).map(|r| jac[(r, c)].powi(2)).sum::<f64>().sqrt() + 1e-4 * r_norm;
            for r in 0..m {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                worst = worst.max((fd - jac[(r, c)]).abs() / col_norm.max(1e-300));
            }
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lorentzian_jacobian_matches_fd(la in -2.0f64..2.0, lg in 0.0f64..6.0, lb in -14.0f64..-4.0) {
            let (f, v) = model_spectrum(1.0, 50.0, 1e-6, 1.0, 2001);
            let groups = f[1..].chunks(37).zip(v[1..].chunks(37)).map(|(fs, vs)| FitGroup {
                frequencies: fs.to_vec(),
                mean_value: vs.iter().sum::<f64>() / vs.len() as f64,
            }).collect();
            let problem = LorentzianProblem { groups };
            let e = fd_check(&problem, &[la, lg, lb]); prop_assert!(e < 1e-6, "{e}");
        }

        #[test]
        fn s11_jacobian_matches_fd(dfr in -0.5f64..0.5, ke in 0.5f64..1.5, ki in 0.01f64..0.2) {
            let (f, s) = synthetic_s11(5.94e9, 11e6, 0.3e6, 201);
            let problem = S11Problem { freqs: f, data: s, origin: 5.94e9, scale: 11.3e6 };
            prop_assert!(fd_check(&problem, &[dfr, ke, ki]) < 1e-6);
        }
    }
}
