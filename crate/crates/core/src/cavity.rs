//! Single-sided cavity coupled to the ion ensemble.
//!
//! Convention: fields evolve as `exp(+i 2π f t)` with `f` in MHz; all rates
//! are energy decay rates expressed as full widths in MHz. The reflection
//! coefficient is
//!
//! ```text
//! r(f) = 1 - κ_in / (i (f - f_c) + κ/2 + W(f))
//! W(f) = g² Σ_j ρ_j ∫ hat_j(f') / (i (f - f') + γ_h/2) df'
//! ```
//!
//! where the density is treated as piecewise linear between grid nodes, so
//! the homogeneous linewidth may be far narrower than the grid step.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ensemble::{FrequencyGrid, SpectralDensity};
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Cavity detuning from the ensemble line center (MHz).
    pub omega_c: f64,
    /// Input coupling rate (MHz).
    pub kappa_in: f64,
    /// Intrinsic loss rate (MHz).
    pub kappa_i: f64,
    /// Ensemble coupling g² per unit density per MHz of grid (MHz²).
    pub coupling_scale: f64,
    /// Optical carrier (GHz), used for quality factors.
    pub f_optical_ghz: f64,
}

impl CavityParams {
    pub fn kappa(&self) -> f64 {
        self.kappa_in + self.kappa_i
    }

    pub fn loaded_q(&self) -> f64 {
        self.f_optical_ghz * 1e3 / self.kappa()
    }

    pub fn intrinsic_q(&self) -> f64 {
        self.f_optical_ghz * 1e3 / self.kappa_i
    }

    /// Cavity from a loaded quality factor and the fraction of the total
    /// decay that goes through the input port.
    pub fn from_loaded_q(f_optical_ghz: f64, loaded_q: f64, input_fraction: f64) -> Result<Self> {
        if !(f_optical_ghz > 0.0 && loaded_q > 0.0) {
            return config("optical frequency and loaded Q must be positive");
        }
        if !(input_fraction > 0.0 && input_fraction <= 1.0) {
            return config(format!("input coupling fraction must be in (0, 1] (got {input_fraction})"));
        }
        let kappa = f_optical_ghz * 1e3 / loaded_q;
        let cav = Self {
            omega_c: 0.0,
            kappa_in: input_fraction * kappa,
            kappa_i: (1.0 - input_fraction) * kappa,
            coupling_scale: 0.0,
            f_optical_ghz,
        };
        Ok(cav)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kappa_in > 0.0) {
            out.push(format!("cavity kappa_in must be > 0 (got {})", self.kappa_in));
        }
        if !(self.kappa_i >= 0.0) {
            out.push(format!("cavity kappa_i must be >= 0 (got {})", self.kappa_i));
        }
        if !(self.coupling_scale >= 0.0) {
            out.push(format!("cavity coupling_scale must be >= 0 (got {})", self.coupling_scale));
        }
        if !(self.f_optical_ghz > 0.0) || !self.loaded_q().is_finite() {
            out.push("cavity optical frequency must be positive with a finite loaded Q".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            config(v.join("; "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousParams {
    /// Homogeneous FWHM of a single ion class (MHz).
    pub gamma_h: f64,
}

impl HomogeneousParams {
    pub fn new(gamma_h: f64) -> Result<Self> {
        if !(gamma_h > 0.0) {
            return config(format!("homogeneous linewidth must be > 0 (got {gamma_h})"));
        }
        Ok(Self { gamma_h })
    }

    /// γ_h = 1 / (π T₂), with T₂ in μs.
    pub fn from_t2_us(t2_us: f64) -> Result<Self> {
        Self::new(1.0 / (std::f64::consts::PI * t2_us))
    }
}

/// `∫ hat(x/step) / (γ/2 + i (offset - x)) dx` over `x ∈ [-step, step]`.
pub fn hat_kernel(offset: f64, step: f64, half_gamma: f64) -> Complex64 {
    if step < Complex64::new(half_gamma, offset).norm() / 32.0 {
        // The closed form cancels badly far from resonance.
        hat_kernel_series(offset, step, half_gamma)
    } else {
        hat_kernel_closed(offset, step, half_gamma)
    }
}

fn hat_kernel_closed(offset: f64, step: f64, half_gamma: f64) -> Complex64 {
    let c = Complex64::new(half_gamma, offset);
    let lp = Complex64::new(half_gamma, offset - step).ln();
    let lm = Complex64::new(half_gamma, offset + step).ln();
    Complex64::i() * (lp - lm) + c / step * (2.0 * c.ln() - lp - lm)
}

fn hat_kernel_series(offset: f64, step: f64, half_gamma: f64) -> Complex64 {
    let ratio = Complex64::new(step, 0.0) / Complex64::new(half_gamma, offset);
    let z = ratio * ratio;
    ratio * (1.0 - z / 6.0 + z * z / 15.0 - z * z * z / 28.0)
}

fn check_coverage(grid: &FrequencyGrid, omega: f64) -> Result<()> {
    if !grid.contains(omega) {
        return Err(Error::Evaluation(format!(
            "frequency {omega} MHz lies outside the density grid [{:.4}, {:.4}] MHz",
            grid.start,
            grid.end()
        )));
    }
    Ok(())
}

/// Ensemble coupling W(ω) by direct summation over all bins.
pub fn ensemble_coupling(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    omega: f64,
) -> Result<Complex64> {
    check_coverage(&density.grid, omega)?;
    let grid = density.grid;
    let half_gamma = homog.gamma_h / 2.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &rho) in density.active.iter().enumerate() {
        if rho != 0.0 {
            acc += rho * hat_kernel(omega - grid.freq(j), grid.step, half_gamma);
        }
    }
    Ok(cavity.coupling_scale * acc)
}

/// W evaluated on every grid node, interpolated linearly in between.
#[derive(Debug, Clone)]
pub struct CouplingProfile {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl CouplingProfile {
    /// FFT convolution of the density with the bin-integrated kernel.
    pub fn compute(density: &SpectralDensity, cavity: &CavityParams, homog: &HomogeneousParams) -> Self {
        let grid = density.grid;
        let n = grid.len;
        let half_gamma = homog.gamma_h / 2.0;
        let size = (2 * n - 1).next_power_of_two();

        let mut kernel = vec![Complex64::new(0.0, 0.0); size];
        for m in 0..n {
            kernel[m] = hat_kernel(m as f64 * grid.step, grid.step, half_gamma);
            if m > 0 {
                kernel[size - m] = hat_kernel(-(m as f64) * grid.step, grid.step, half_gamma);
            }
        }
        let mut rho = vec![Complex64::new(0.0, 0.0); size];
        for (r, &a) in rho.iter_mut().zip(&density.active) {
            r.re = a;
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        fwd.process(&mut kernel);
        fwd.process(&mut rho);
        for (r, k) in rho.iter_mut().zip(&kernel) {
            *r *= k;
        }
        inv.process(&mut rho);
        let norm = cavity.coupling_scale / size as f64;
        let values = rho[..n].iter().map(|v| v * norm).collect();
        Self { grid, values }
    }

    pub fn at(&self, omega: f64) -> Result<Complex64> {
        check_coverage(&self.grid, omega)?;
        let x = self.grid.position(omega).max(0.0);
        let i = (x.floor() as usize).min(self.grid.len - 1);
        let t = x - i as f64;
        if t < 1e-9 || i + 1 >= self.grid.len {
            return Ok(self.values[i]);
        }
        if t > 1.0 - 1e-9 {
            return Ok(self.values[i + 1]);
        }
        Ok(self.values[i] * (1.0 - t) + self.values[i + 1] * t)
    }
}

/// r(ω) = 1 − κ_in / (i(ω − ω_c) + κ/2 + W).
pub fn reflection_coefficient(cavity: &CavityParams, w: Complex64, omega: f64) -> Complex64 {
    let denom = Complex64::new(cavity.kappa() / 2.0, omega - cavity.omega_c) + w;
    Complex64::new(1.0, 0.0) - cavity.kappa_in / denom
}

/// C = 2 Re W(0) / κ at the ensemble line center.
pub fn cooperativity(density: &SpectralDensity, cavity: &CavityParams, homog: &HomogeneousParams) -> Result<f64> {
    let w = ensemble_coupling(density, cavity, homog, 0.0)?;
    Ok(2.0 * w.re / cavity.kappa())
}

/// Re W (MHz) averaged over one comb period around `center`.
pub fn mean_coupling_rate(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    center: f64,
    period: f64,
) -> Result<f64> {
    let samples = 64;
    let mut acc = 0.0;
    for k in 0..samples {
        let f = center - period / 2.0 + (k as f64 + 0.5) * period / samples as f64;
        acc += ensemble_coupling(density, cavity, homog, f)?.re;
    }
    Ok(acc / samples as f64)
}

/// Cooperativity with Re W averaged over one comb period around `center`.
pub fn tailored_cooperativity(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    center: f64,
    period: f64,
) -> Result<f64> {
    Ok(2.0 * mean_coupling_rate(density, cavity, homog, center, period)? / cavity.kappa())
}

/// Coupling scale that gives cooperativity `target` at line center.
pub fn calibrate_coupling(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    target: f64,
) -> Result<CavityParams> {
    let unit = CavityParams { coupling_scale: 1.0, ..*cavity };
    let c = cooperativity(density, &unit, homog)?;
    if !(c > 0.0) {
        return config("density has no absorption at line center; cannot calibrate cooperativity");
    }
    Ok(CavityParams { coupling_scale: target / c, ..*cavity })
}

/// Coupling scale that gives tailored (period-averaged) cooperativity `target`.
pub fn calibrate_tailored_coupling(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    center: f64,
    period: f64,
    target: f64,
) -> Result<CavityParams> {
    let unit = CavityParams { coupling_scale: 1.0, ..*cavity };
    let c = tailored_cooperativity(density, &unit, homog, center, period)?;
    if !(c > 0.0) {
        return config("tailored density has no absorption; cannot calibrate cooperativity");
    }
    Ok(CavityParams { coupling_scale: target / c, ..*cavity })
}

/// r(ω) sampled at `freqs` (MHz), using the FFT coupling profile.
pub fn reflection_spectrum(
    density: &SpectralDensity,
    cavity: &CavityParams,
    homog: &HomogeneousParams,
    freqs: &[f64],
) -> Result<Vec<Complex64>> {
    let profile = CouplingProfile::compute(density, cavity, homog);
    reflection_from_profile(&profile, cavity, freqs)
}

pub fn reflection_from_profile(profile: &CouplingProfile, cavity: &CavityParams, freqs: &[f64]) -> Result<Vec<Complex64>> {
    freqs
        .iter()
        .map(|&f| Ok(reflection_coefficient(cavity, profile.at(f)?, f)))
        .collect()
}

/// Closed-form W for an untruncated Lorentzian line of FWHM `line_fwhm`
/// with line-center cooperativity `coop`.
pub fn lorentzian_line_coupling(coop: f64, kappa: f64, line_fwhm: f64, gamma_h: f64, omega: f64) -> Complex64 {
    let half = (line_fwhm + gamma_h) / 2.0;
    Complex64::new(coop * kappa / 2.0 * half, 0.0) / Complex64::new(half, omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::LineShape;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cavity() -> CavityParams {
        CavityParams { omega_c: 0.0, kappa_in: 4000.0, kappa_i: 23_000.0, coupling_scale: 1.0, f_optical_ghz: 194_816.0 }
    }

    #[test]
    fn kernel_series_and_closed_form_agree() {
        let s = 0.01;
        for &h in &[1e-3, 0.1] {
            for &m in &[33.0, 40.0, 100.0] {
                let a = hat_kernel_closed(m * s, s, h);
                let b = hat_kernel_series(m * s, s, h);
                assert!((a - b).norm() < 1e-9 * b.norm(), "{m}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn kernel_narrow_line_limit_is_pi() {
        let k = hat_kernel(0.0, 0.01, 1e-6);
        assert_relative_eq!(k.re, PI, max_relative = 1e-3);
        assert!(k.im.abs() < 1e-12);
    }

    #[test]
    fn kernel_matches_quadrature() {
        let (s, h) = (0.2, 0.05);
        for &off in &[0.0, 0.07, 0.3, -1.1, 5.0] {
            let n = 200_000;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let x = -s + (k as f64 + 0.5) * 2.0 * s / n as f64;
                let w = 1.0 - x.abs() / s;
                acc += w / Complex64::new(h, off - x);
            }
            acc *= 2.0 * s / n as f64;
            let k = hat_kernel(off, s, h);
            assert_relative_eq!(k.re, acc.re, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(k.im, acc.im, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_density_zero_coupling() {
        let grid = FrequencyGrid::symmetric(10.0, 0.1).unwrap();
        let d = SpectralDensity::zeros(grid);
        let h = HomogeneousParams::new(0.002).unwrap();
        assert_eq!(ensemble_coupling(&d, &cavity(), &h, 0.0).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(cooperativity(&d, &cavity(), &h).unwrap(), 0.0);
    }

    #[test]
    fn single_bin_wide_homogeneous_line() {
        // γ_h ≫ step: the hat integral collapses to step / (γ_h/2).
        let grid = FrequencyGrid::symmetric(10.0, 1e-4).unwrap();
        let mut d = SpectralDensity::zeros(grid);
        let i0 = grid.position(0.0).round() as usize;
        d.active[i0] = 2.5;
        let h = HomogeneousParams::new(0.5).unwrap();
        let w = ensemble_coupling(&d, &cavity(), &h, 0.0).unwrap();
        assert_relative_eq!(w.re, 2.5 * 1e-4 / 0.25, max_relative = 1e-6);
        assert!(w.im.abs() < 1e-15);
    }

    #[test]
    fn broad_lorentzian_limit() {
        let grid = FrequencyGrid::symmetric(20_000.0, 0.5).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
        let h = HomogeneousParams::from_t2_us(149.0).unwrap();
        let cav = cavity();
        let w = ensemble_coupling(&d, &cav, &h, 0.0).unwrap();
        let g2_tot = cav.coupling_scale * d.total_active() * grid.step;
        let expected = 2.0 * g2_tot / 150.0;
        assert!((w.re - expected).abs() / expected < 0.02, "{} vs {}", w.re, expected);
    }

    #[test]
    fn profile_matches_direct_sum() {
        let grid = FrequencyGrid::symmetric(50.0, 0.05).unwrap();
        let d = SpectralDensity::init_inhomogeneous(30.0, 1.0, LineShape::Gaussian, grid).unwrap();
        let d = d.apply_pump_sweep(&crate::ensemble::PumpSweep::comb(0.0, 3.0, 9, 1.0, 0.5, 5)).unwrap();
        let h = HomogeneousParams::new(0.002).unwrap();
        let cav = cavity();
        let prof = CouplingProfile::compute(&d, &cav, &h);
        for &f in &[-50.0, -12.35, 0.0, 0.05, 7.4, 50.0] {
            let direct = ensemble_coupling(&d, &cav, &h, f).unwrap();
            let fast = prof.at(f).unwrap();
            assert!((direct - fast).norm() < 1e-9 * direct.norm().max(1.0), "{f}: {direct} vs {fast}");
        }
    }

    #[test]
    fn reflection_limits() {
        let mut cav = cavity();
        let zero = Complex64::new(0.0, 0.0);
        let far = reflection_coefficient(&cav, zero, 1e9);
        assert!((far - 1.0).norm() < 1e-4);

        cav.kappa_i = cav.kappa_in;
        assert!(reflection_coefficient(&cav, zero, 0.0).norm() < 1e-15);

        cav.kappa_i = 0.0;
        let r = reflection_coefficient(&cav, zero, 0.0);
        assert_relative_eq!(r.re, -1.0, epsilon = 1e-15);
        assert!(r.im.abs() < 1e-15);
    }

    #[test]
    fn cooperativity_linear_in_scale() {
        let grid = FrequencyGrid::symmetric(400.0, 0.1).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
        let h = HomogeneousParams::from_t2_us(149.0).unwrap();
        let cav = calibrate_coupling(&d, &cavity(), &h, 0.1).unwrap();
        assert_relative_eq!(cooperativity(&d, &cav, &h).unwrap(), 0.1, max_relative = 1e-12);
        let doubled = CavityParams { coupling_scale: 2.0 * cav.coupling_scale, ..cav };
        assert_relative_eq!(cooperativity(&d, &doubled, &h).unwrap(), 0.2, max_relative = 1e-12);
    }

    #[test]
    fn quality_factor_sets_dip_width() {
        let cav = CavityParams::from_loaded_q(194_816.0, 7.0e3, 0.5).unwrap();
        assert_relative_eq!(cav.kappa(), 27_830.857, max_relative = 1e-6);
        // empty cavity: |r|² = 1/2 at ω = ±κ/√2... check the FWHM of the dip instead
        let dip = |f: f64| 1.0 - reflection_coefficient(&cav, Complex64::new(0.0, 0.0), f).norm_sqr();
        assert_relative_eq!(dip(cav.kappa() / 2.0), dip(0.0) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn out_of_grid_is_an_error() {
        let grid = FrequencyGrid::symmetric(10.0, 0.1).unwrap();
        let d = SpectralDensity::zeros(grid);
        let h = HomogeneousParams::new(0.002).unwrap();
        assert!(matches!(ensemble_coupling(&d, &cavity(), &h, 11.0), Err(Error::Evaluation(_))));
    }
}
