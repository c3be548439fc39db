//! Bounded Levenberg-Marquardt least squares and the cavity reflection fit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cavity::lorentzian_line_coupling;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Converged when every relative parameter step falls below this.
    pub rel_step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 500, rel_step_tol: 1e-9, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residual_norm: f64,
    /// Standard errors from `s² (JᵀJ)⁻¹`, `s² = SSR / (n - p)`.
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn residual_norm(r: &DVector<f64>) -> f64 {
    r.norm()
}

fn jacobian<F>(f: &F, p: &[f64], r0: &DVector<f64>, scale: &[f64], lower: &[f64], upper: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let n = r0.len();
    let mut jac = DMatrix::zeros(n, p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-7 * (p[k].abs() + scale[k]);
        // central difference, one-sided at a bound
        let (lo, hi) = ((p[k] - h).max(lower[k]), (p[k] + h).min(upper[k]));
        q[k] = hi;
        let rp = f(&q);
        q[k] = lo;
        let rm = if lo < p[k] { f(&q) } else { r0.clone() };
        q[k] = p[k];
        let denom = hi - lo;
        for i in 0..n {
            jac[(i, k)] = (rp[i] - rm[i]) / denom;
        }
    }
    jac
}

/// Minimize `‖residuals(p)‖²` subject to `lower <= p <= upper`.
///
/// `scale` gives a typical magnitude per parameter for finite differences.
pub fn levenberg_marquardt<F>(
    residuals: F,
    p0: &[f64],
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    cfg: LmConfig,
) -> LmOutcome
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let np = p0.len();
    let clamp = |p: &mut [f64]| {
        for k in 0..np {
            p[k] = p[k].clamp(lower[k], upper[k]);
        }
    };
    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = cfg.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &p, &r, scale, lower, upper);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial);
            let rt = residuals(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                small_step = trial
                    .iter()
                    .zip(&p)
                    .enumerate()
                    .all(|(k, (t, q))| (t - q).abs() <= cfg.rel_step_tol * (q.abs() + scale[k]));
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || small_step {
            // No downhill step exists at any damping: a stationary point.
            converged = true;
            break;
        }
    }

    let jac = jacobian(&residuals, &p, &r, scale, lower, upper);
    let jtj = jac.transpose() * &jac;
    let dof = (r.len().saturating_sub(np)).max(1) as f64;
    let s2 = cost / dof;
    let std_errors = match jtj.try_inverse() {
        Some(inv) => (0..np).map(|k| (inv[(k, k)] * s2).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; np],
    };
    LmOutcome { params: p, residual_norm: residual_norm(&r), std_errors, iterations, converged }
}

/// Parameters of the analytic reflection model: cavity plus a Lorentzian
/// ensemble line at zero detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionModel {
    pub omega_c: f64,
    pub kappa_in: f64,
    pub kappa_i: f64,
    pub cooperativity: f64,
    pub line_fwhm: f64,
}

impl ReflectionModel {
    pub const NAMES: [&'static str; 5] = ["omega_c", "kappa_in", "kappa_i", "cooperativity", "line_fwhm"];

    fn to_vec(self) -> Vec<f64> {
        vec![self.omega_c, self.kappa_in, self.kappa_i, self.cooperativity, self.line_fwhm]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self { omega_c: p[0], kappa_in: p[1], kappa_i: p[2], cooperativity: p[3], line_fwhm: p[4] }
    }

    pub fn reflection(&self, gamma_h: f64, omega: f64) -> Complex64 {
        let kappa = self.kappa_in + self.kappa_i;
        let w = lorentzian_line_coupling(self.cooperativity, kappa, self.line_fwhm, gamma_h, omega);
        let denom = Complex64::new(kappa / 2.0, omega - self.omega_c) + w;
        Complex64::new(1.0, 0.0) - self.kappa_in / denom
    }

    pub fn reflectance(&self, gamma_h: f64, omega: f64) -> f64 {
        self.reflection(gamma_h, omega).norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionFit {
    pub params: ReflectionModel,
    pub std_errors: ReflectionModel,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Least-squares fit of measured `(freq MHz, |r|²)` samples.
pub fn fit_reflection(measured: &[(f64, f64)], guess: ReflectionModel, gamma_h: f64) -> Result<ReflectionFit> {
    let np = ReflectionModel::NAMES.len();
    if measured.len() < 5 * np {
        return config(format!(
            "reflection fit needs at least {} samples for {np} parameters (got {})",
            5 * np,
            measured.len()
        ));
    }
    let residuals = |p: &[f64]| {
        let m = ReflectionModel::from_slice(p);
        DVector::from_iterator(measured.len(), measured.iter().map(|&(f, y)| m.reflectance(gamma_h, f) - y))
    };
    let p0 = guess.to_vec();
    let lower = [f64::NEG_INFINITY, 1e-9, 0.0, 0.0, 1e-6];
    let upper = [f64::INFINITY; 5];
    let kappa0 = guess.kappa_in + guess.kappa_i;
    let scale = [kappa0, kappa0, kappa0, 1.0, guess.line_fwhm];
    let out = levenberg_marquardt(residuals, &p0, &lower, &upper, &scale, LmConfig::default());
    if !out.converged {
        return Err(Error::FitFailure {
            reason: "iteration cap reached".into(),
            best_params: out.params,
            residual_norm: out.residual_norm,
            iterations: out.iterations,
        });
    }
    Ok(ReflectionFit {
        params: ReflectionModel::from_slice(&out.params),
        std_errors: ReflectionModel::from_slice(&out.std_errors),
        residual_norm: out.residual_norm,
        iterations: out.iterations,
    })
}
