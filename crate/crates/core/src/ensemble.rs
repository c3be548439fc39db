//! Spectral density of the inhomogeneously broadened ensemble.
//!
//! Every frequency bin carries two populations: `active` ions that absorb on
//! the storage transition and `shelved` ions parked in long-lived hyperfine
//! levels. Pumping moves population from active to shelved, relaxation moves
//! it back. All operations return new values and leave their input untouched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{config, Result};

/// Uniform frequency grid, in MHz relative to the ensemble line center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return config(format!("grid step must be positive, got {step}"));
        }
        if len < 2 {
            return config("grid needs at least two bins");
        }
        if !start.is_finite() {
            return config("grid start must be finite");
        }
        Ok(Self { start, step, len })
    }

    /// Grid of `2 * round(half_span / step) + 1` bins centered on zero.
    pub fn symmetric(half_span: f64, step: f64) -> Result<Self> {
        if !(half_span > 0.0) {
            return config(format!("grid half span must be positive, got {half_span}"));
        }
        if !(step > 0.0) {
            return config(format!("grid step must be positive, got {step}"));
        }
        let half = (half_span / step).ceil() as usize;
        Self::new(-(half as f64) * step, step, 2 * half + 1)
    }

    #[inline]
    pub fn freq(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.freq(self.len - 1)
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start
    }

    pub fn contains(&self, f: f64) -> bool {
        let tol = 1e-9 * self.step;
        f >= self.start - tol && f <= self.end() + tol
    }

    /// Fractional bin position of `f`.
    #[inline]
    pub fn position(&self, f: f64) -> f64 {
        (f - self.start) / self.step
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.freq(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineShape {
    Lorentzian,
    Gaussian,
}

impl LineShape {
    /// Unit-peak profile with the given FWHM, evaluated at `x` from center.
    pub fn profile(self, x: f64, fwhm: f64) -> f64 {
        let u = 2.0 * x / fwhm;
        match self {
            LineShape::Lorentzian => 1.0 / (1.0 + u * u),
            LineShape::Gaussian => (-LN_2 * u * u).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToothShape {
    Gaussian,
    Square,
}

/// Ideal comb description used by [`SpectralDensity::comb_from_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSpec {
    /// Tooth spacing Δ (MHz).
    pub delta: f64,
    /// Tooth FWHM (MHz).
    pub tooth_width: f64,
    pub n_teeth: usize,
    /// Detuning of the comb center from the line center (MHz).
    pub center_offset: f64,
    /// Residual density between teeth as a fraction of the envelope.
    pub background: f64,
    pub tooth_shape: ToothShape,
}

impl CombSpec {
    pub fn finesse(&self) -> f64 {
        self.delta / self.tooth_width
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_teeth as f64 * self.delta
    }

    /// Every violated invariant, empty when the spec is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0) {
            out.push(format!("comb delta must be > 0 (got {})", self.delta));
        }
        if !(self.tooth_width > 0.0 && self.tooth_width < self.delta) {
            out.push(format!(
                "comb tooth_width must satisfy 0 < tooth_width < delta (got tooth_width {} with delta {})",
                self.tooth_width, self.delta
            ));
        }
        if !(0.0..1.0).contains(&self.background) {
            out.push(format!("comb background must be in [0, 1) (got {})", self.background));
        }
        if self.n_teeth < 2 {
            out.push(format!("comb n_teeth must be >= 2 (got {})", self.n_teeth));
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

    fn tooth_center(&self, k: usize) -> f64 {
        self.center_offset + (k as f64 - (self.n_teeth as f64 - 1.0) / 2.0) * self.delta
    }

    /// Pattern value in [background, 1] at frequency `f`; 1 outside the comb band.
    pub fn pattern(&self, f: f64) -> f64 {
        let lo = self.tooth_center(0) - self.delta / 2.0;
        let hi = self.tooth_center(self.n_teeth - 1) + self.delta / 2.0;
        if f < lo || f > hi {
            return 1.0;
        }
        let k = (((f - lo) / self.delta).floor() as usize).min(self.n_teeth - 1);
        let x = f - self.tooth_center(k);
        let tooth = match self.tooth_shape {
            ToothShape::Gaussian => LineShape::Gaussian.profile(x, self.tooth_width),
            ToothShape::Square => {
                if x.abs() <= self.tooth_width / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        self.background + (1.0 - self.background) * tooth
    }
}

/// A set of pump frequencies applied `n_pump` times each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpSweep {
    pub freqs: Vec<f64>,
    /// FWHM of the Gaussian pump window (MHz).
    pub width: f64,
    /// Transfer probability per pass at the pump center.
    pub transfer_prob: f64,
    pub n_pump: u32,
}

impl PumpSweep {
    /// `count` pump lines spaced by `spacing`, centered on `center`.
    pub fn comb(center: f64, spacing: f64, count: usize, width: f64, transfer_prob: f64, n_pump: u32) -> Self {
        let freqs = (0..count)
            .map(|k| center + (k as f64 - (count as f64 - 1.0) / 2.0) * spacing)
            .collect();
        Self { freqs, width, transfer_prob, n_pump }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.transfer_prob) {
            out.push(format!("pump transfer_prob must be in [0, 1] (got {})", self.transfer_prob));
        }
        if !(self.width > 0.0) {
            out.push(format!("pump width must be > 0 (got {})", self.width));
        }
        out
    }
}

/// Pulse-pair sequence for the accumulated comb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsePairTrain {
    /// Separation within a pair (μs); `None` means single pulses.
    pub pair_separation: Option<f64>,
    /// Intensity FWHM of each preparation pulse (ns).
    pub pulse_width: f64,
    pub n_pairs: u32,
    /// Per-repetition transfer probability at the spectral peak.
    pub transfer_prob_peak: f64,
}

impl PulsePairTrain {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(ts) = self.pair_separation {
            if !(ts > 0.0) {
                out.push(format!("pair_separation must be > 0 (got {ts})"));
            }
        }
        if !(self.pulse_width > 0.0) {
            out.push(format!("pulse_width must be > 0 (got {})", self.pulse_width));
        }
        if self.n_pairs < 1 {
            out.push("n_pairs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.transfer_prob_peak) {
            out.push(format!("transfer_prob_peak must be in [0, 1] (got {})", self.transfer_prob_peak));
        }
        out
    }

    /// Per-repetition transfer probability at detuning `f` (MHz).
    pub fn transfer_prob(&self, f: f64) -> f64 {
        let tau_us = self.pulse_width * 1e-3;
        let envelope = (-(PI * f * tau_us).powi(2) / LN_2).exp();
        let fringe = match self.pair_separation {
            Some(ts) => (PI * f * ts).cos().powi(2),
            None => 1.0,
        };
        self.transfer_prob_peak * fringe * envelope
    }

    /// Closed-form survival of active population after all repetitions.
    pub fn survival(&self, f: f64) -> f64 {
        let p = self.transfer_prob(f);
        if p >= 1.0 {
            return 0.0;
        }
        (self.n_pairs as f64 * (-p).ln_1p()).exp()
    }
}

/// Superhyperfine smearing: a fraction of every spectral feature stays sharp,
/// the remainder is spread by a unit-area Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperhyperfineBlur {
    pub kernel_fwhm: f64,
    #[serde(default)]
    pub retained_fraction: f64,
}

impl SuperhyperfineBlur {
    pub fn gaussian(kernel_fwhm: f64) -> Self {
        Self { kernel_fwhm, retained_fraction: 0.0 }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kernel_fwhm >= 0.0) {
            out.push(format!("blur kernel_fwhm must be >= 0 (got {})", self.kernel_fwhm));
        }
        if !(0.0..=1.0).contains(&self.retained_fraction) {
            out.push(format!("blur retained_fraction must be in [0, 1] (got {})", self.retained_fraction));
        }
        out
    }
}

/// Outcome of [`SpectralDensity::apply_hyperfine_init`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub requested_enhancement: f64,
    pub achieved_enhancement: f64,
    /// Set when the available reservoir could not supply the request.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub grid: FrequencyGrid,
    pub active: Vec<f64>,
    pub shelved: Vec<f64>,
    /// Equilibrium shelved/active ratio, i.e. population held in the other
    /// hyperfine levels at thermal equilibrium. Zero means relaxation returns
    /// everything to the active level.
    #[serde(default)]
    pub reservoir_ratio: f64,
}

impl SpectralDensity {
    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            active: vec![0.0; grid.len],
            shelved: vec![0.0; grid.len],
            reservoir_ratio: 0.0,
        }
    }

    pub fn from_active(grid: FrequencyGrid, active: Vec<f64>) -> Result<Self> {
        if active.len() != grid.len {
            return config(format!("active length {} does not match grid length {}", active.len(), grid.len));
        }
        if active.iter().any(|a| !(*a >= 0.0)) {
            return config("active density must be non-negative");
        }
        Ok(Self { grid, shelved: vec![0.0; grid.len], active, reservoir_ratio: 0.0 })
    }

    /// Inhomogeneous line of the given shape, FWHM and peak density.
    pub fn init_inhomogeneous(fwhm: f64, peak_density: f64, shape: LineShape, grid: FrequencyGrid) -> Result<Self> {
        if !(fwhm > 0.0) {
            return config(format!("inhomogeneous fwhm must be > 0 (got {fwhm})"));
        }
        if !(peak_density >= 0.0) {
            return config(format!("peak density must be >= 0 (got {peak_density})"));
        }
        if grid.span() < fwhm {
            return config(format!(
                "grid span {:.3} MHz is narrower than the line FWHM {fwhm} MHz",
                grid.span()
            ));
        }
        let active = (0..grid.len).map(|i| peak_density * shape.profile(grid.freq(i), fwhm)).collect();
        Ok(Self { grid, active, shelved: vec![0.0; grid.len], reservoir_ratio: 0.0 })
    }

    /// Populate the shelf at thermal equilibrium: `shelved = ratio * active`.
    pub fn with_reservoir(mut self, ratio: f64) -> Result<Self> {
        if !(ratio >= 0.0) {
            return config(format!("reservoir ratio must be >= 0 (got {ratio})"));
        }
        for (s, a) in self.shelved.iter_mut().zip(&self.active) {
            *s = ratio * a;
        }
        self.reservoir_ratio = ratio;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    pub fn total_active(&self) -> f64 {
        self.active.iter().sum()
    }

    pub fn total_population(&self) -> f64 {
        self.active.iter().zip(&self.shelved).map(|(a, s)| a + s).sum()
    }

    /// Linear interpolation of the active density.
    pub fn active_at(&self, f: f64) -> f64 {
        let x = self.grid.position(f);
        if x <= 0.0 {
            return self.active[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.len() {
            return self.active[self.len() - 1];
        }
        let t = x - i as f64;
        self.active[i] * (1.0 - t) + self.active[i + 1] * t
    }

    /// Multiply every bin by `factor` (active and shelved).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.active.iter_mut().for_each(|a| *a *= factor);
        out.shelved.iter_mut().for_each(|s| *s *= factor);
        out
    }

    /// Move population from active to shelved with per-bin survival `keep`.
    fn pump_with<F: Fn(f64) -> f64 + Sync>(&self, keep: F) -> Self {
        let grid = self.grid;
        let (active, shelved): (Vec<f64>, Vec<f64>) = self
            .active
            .par_iter()
            .zip(self.shelved.par_iter())
            .enumerate()
            .map(|(i, (&a, &s))| {
                let k = keep(grid.freq(i));
                if k >= 1.0 {
                    (a, s)
                } else {
                    let remaining = a * k;
                    (remaining, s + (a - remaining))
                }
            })
            .unzip();
        Self { grid, active, shelved, reservoir_ratio: self.reservoir_ratio }
    }

    /// Frequency-selective optical pumping at each of `sweep.freqs`.
    ///
    /// A bin at weight `w` inside a pump window keeps
    /// `(1 - transfer_prob * w)^n_pump` of its active population. Windows are
    /// Gaussian and cut off at three FWHM; bins outside every window are
    /// returned unchanged.
    pub fn apply_pump_sweep(&self, sweep: &PumpSweep) -> Result<Self> {
        let v = sweep.violations();
        if !v.is_empty() {
            return config(v.join("; "));
        }
        if sweep.transfer_prob == 0.0 || sweep.n_pump == 0 {
            return Ok(self.clone());
        }
        let cutoff = 3.0 * sweep.width;
        let n = sweep.n_pump as f64;
        Ok(self.pump_with(|f| {
            let mut keep = 1.0;
            for &fp in &sweep.freqs {
                let x = f - fp;
                if x.abs() <= cutoff {
                    let w = LineShape::Gaussian.profile(x, sweep.width);
                    let p = sweep.transfer_prob * w;
                    keep *= if p >= 1.0 { 0.0 } else { (n * (-p).ln_1p()).exp() };
                }
            }
            keep
        }))
    }

    /// Conservative redistribution that raises the active density inside
    /// `|f| < sweep_lo` toward `enhancement` times its current value.
    ///
    /// Population is drawn first from the shelf of the same bin, then from the
    /// wing region `sweep_lo <= |f| <= sweep_hi` (active and shelved). When
    /// the sources run dry the enhancement is clamped and flagged.
    pub fn apply_hyperfine_init(&self, sweep_lo: f64, sweep_hi: f64, enhancement: f64) -> Result<(Self, InitReport)> {
        if !(sweep_lo > 0.0 && sweep_lo < sweep_hi) {
            return config(format!("hyperfine sweep needs 0 < sweep_lo < sweep_hi (got {sweep_lo}, {sweep_hi})"));
        }
        if !(enhancement >= 1.0) {
            return config(format!("hyperfine enhancement must be >= 1 (got {enhancement})"));
        }
        let mut out = self.clone();
        let central: Vec<usize> = (0..self.len()).filter(|&i| self.grid.freq(i).abs() < sweep_lo).collect();
        let wing: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let f = self.grid.freq(i).abs();
                f >= sweep_lo && f <= sweep_hi
            })
            .collect();
        let before: f64 = central.iter().map(|&i| self.active[i]).sum();
        if enhancement == 1.0 || before == 0.0 {
            let report = InitReport { requested_enhancement: enhancement, achieved_enhancement: 1.0, clamped: enhancement > 1.0 };
            return Ok((out, report));
        }

        // Local shelf first.
        let mut deficit = vec![0.0; central.len()];
        for (d, &i) in deficit.iter_mut().zip(&central) {
            let need = (enhancement - 1.0) * self.active[i];
            let local = need.min(self.shelved[i]);
            out.active[i] = self.active[i] + local;
            out.shelved[i] = self.shelved[i] - local;
            *d = need - local;
        }
        let total_deficit: f64 = deficit.iter().sum();

        let mut clamped = false;
        if total_deficit > 0.0 {
            let available: f64 = wing.iter().map(|&i| self.active[i] + self.shelved[i]).sum();
            let delivered = total_deficit.min(available);
            clamped = total_deficit > available;
            if available > 0.0 {
                let drain = 1.0 - delivered / available;
                for &i in &wing {
                    out.active[i] = self.active[i] * drain;
                    out.shelved[i] = self.shelved[i] * drain;
                }
                // Hand out exactly what the wings lost so the books balance.
                let removed: f64 = wing
                    .iter()
                    .map(|&i| (self.active[i] - out.active[i]) + (self.shelved[i] - out.shelved[i]))
                    .sum();
                let share = removed / total_deficit;
                for (d, &i) in deficit.iter().zip(&central) {
                    out.active[i] += d * share;
                }
            }
        }
        let after: f64 = central.iter().map(|&i| out.active[i]).sum();
        let report = InitReport {
            requested_enhancement: enhancement,
            achieved_enhancement: after / before,
            clamped,
        };
        Ok((out, report))
    }

    /// Accumulated comb from repeated weak pulse pairs.
    pub fn accumulate_afc(&self, train: &PulsePairTrain) -> Result<Self> {
        let v = train.violations();
        if !v.is_empty() {
            return config(v.join("; "));
        }
        if let Some(ts) = train.pair_separation {
            let period = 1.0 / ts;
            if self.grid.step > period / 10.0 * (1.0 + 1e-9) {
                return config(format!(
                    "grid step {} MHz cannot resolve a comb of period {period} MHz (need <= {} MHz)",
                    self.grid.step,
                    period / 10.0
                ));
            }
        }
        Ok(self.pump_with(|f| train.survival(f)))
    }

    /// Convolve the active density with the superhyperfine kernel.
    ///
    /// The Gaussian part is discretized on the grid, normalized to unit sum and
    /// reflected at the grid edges, so the total is preserved and constants are
    /// fixed points. The shelf is not touched.
    pub fn apply_superhyperfine_blur(&self, blur: &SuperhyperfineBlur) -> Result<Self> {
        let v = blur.violations();
        if !v.is_empty() {
            return config(v.join("; "));
        }
        let sigma_bins = blur.kernel_fwhm / (2.0 * (2.0 * LN_2).sqrt()) / self.grid.step;
        if blur.kernel_fwhm == 0.0 || blur.retained_fraction == 1.0 || sigma_bins < 1e-3 {
            return Ok(self.clone());
        }
        let half = ((5.0 * sigma_bins).ceil() as usize).max(1);
        let mut kernel: Vec<f64> = (0..=2 * half)
            .map(|k| {
                let m = k as f64 - half as f64;
                (-0.5 * (m / sigma_bins).powi(2)).exp()
            })
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= norm);

        let n = self.len() as isize;
        let reflect = |j: isize| -> usize {
            // Half-sample symmetric reflection, valid while the kernel is
            // shorter than the grid.
            let mut j = j;
            loop {
                if j < 0 {
                    j = -1 - j;
                } else if j >= n {
                    j = 2 * n - 1 - j;
                } else {
                    return j as usize;
                }
            }
        };
        let keep = blur.retained_fraction;
        let src = &self.active;
        let active: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let j = i as isize + k as isize - half as isize;
                    acc += w * src[reflect(j)];
                }
                keep * src[i] + (1.0 - keep) * acc
            })
            .collect();
        Ok(Self { grid: self.grid, active, shelved: self.shelved.clone(), reservoir_ratio: self.reservoir_ratio })
    }

    /// Ideal comb imprinted on this density's envelope.
    ///
    /// Removed population is moved to the shelf so totals stay comparable.
    pub fn comb_from_spec(&self, spec: &CombSpec) -> Result<Self> {
        spec.validate()?;
        let lo = spec.center_offset - spec.bandwidth() / 2.0;
        let hi = spec.center_offset + spec.bandwidth() / 2.0;
        if !self.grid.contains(lo) || !self.grid.contains(hi) {
            return config(format!(
                "comb band [{lo:.3}, {hi:.3}] MHz extends beyond the grid [{:.3}, {:.3}] MHz",
                self.grid.start,
                self.grid.end()
            ));
        }
        Ok(self.pump_with(|f| spec.pattern(f)))
    }

    /// Shelf relaxation over `elapsed` seconds with single-exponential lifetime.
    ///
    /// Each bin relaxes toward its equilibrium split set by `reservoir_ratio`;
    /// with a zero ratio the fraction `1 - exp(-elapsed/lifetime)` of the
    /// shelf returns to the active level.
    pub fn relax(&self, elapsed: f64, shelf_lifetime: f64) -> Result<Self> {
        if !(elapsed >= 0.0) {
            return config(format!("elapsed time must be >= 0 (got {elapsed})"));
        }
        if !(shelf_lifetime > 0.0) {
            return config(format!("shelf lifetime must be > 0 (got {shelf_lifetime})"));
        }
        if elapsed == 0.0 {
            return Ok(self.clone());
        }
        let decay = (-elapsed / shelf_lifetime).exp();
        let ratio = self.reservoir_ratio;
        let (active, shelved) = self
            .active
            .iter()
            .zip(&self.shelved)
            .map(|(&a, &s)| {
                let total = a + s;
                let s_eq = total * ratio / (1.0 + ratio);
                let s_new = s_eq + (s - s_eq) * decay;
                (total - s_new, s_new)
            })
            .unzip();
        Ok(Self { grid: self.grid, active, shelved, reservoir_ratio: ratio })
    }

    /// Michelson contrast `(max - min) / (max + min)` of the active density in
    /// `[center - half_width, center + half_width]`.
    pub fn contrast(&self, center: f64, half_width: f64) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..self.len() {
            let f = self.grid.freq(i);
            if (f - center).abs() <= half_width {
                lo = lo.min(self.active[i]);
                hi = hi.max(self.active[i]);
            }
        }
        if !(hi > 0.0) {
            return 0.0;
        }
        (hi - lo) / (hi + lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line() -> SpectralDensity {
        let grid = FrequencyGrid::symmetric(400.0, 0.05).unwrap();
        SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap()
    }

    #[test]
    fn lorentzian_half_width() {
        let d = line();
        assert_relative_eq!(d.active_at(75.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.active_at(-75.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.active_at(0.0), 1.0, epsilon = 1e-12);
        assert!(d.shelved.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn gaussian_half_width() {
        let grid = FrequencyGrid::symmetric(400.0, 0.05).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 2.0, LineShape::Gaussian, grid).unwrap();
        assert_relative_eq!(d.active_at(75.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_peak_is_empty() {
        let grid = FrequencyGrid::symmetric(400.0, 0.5).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 0.0, LineShape::Lorentzian, grid).unwrap();
        assert!(d.active.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn narrow_grid_rejected() {
        let grid = FrequencyGrid::symmetric(50.0, 0.5).unwrap();
        let err = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap_err();
        assert!(err.to_string().contains("narrower"));
    }

    #[test]
    fn zero_transfer_is_identity() {
        let d = line();
        let sweep = PumpSweep::comb(0.0, 6.1, 15, 3.0, 0.0, 20);
        assert_eq!(d.apply_pump_sweep(&sweep).unwrap(), d);
    }

    #[test]
    fn single_pump_matches_per_pass_loop() {
        let d = line();
        let i0 = d.grid.position(10.0).round() as usize;
        let f0 = d.grid.freq(i0);
        let sweep = PumpSweep { freqs: vec![f0], width: 1.0, transfer_prob: 0.1, n_pump: 20 };
        let out = d.apply_pump_sweep(&sweep).unwrap();
        let mut looped = d.active[i0];
        for _ in 0..20 {
            looped *= 1.0 - 0.1;
        }
        assert_relative_eq!(out.active[i0], looped, max_relative = 1e-12);
        assert_relative_eq!(out.active[i0] / d.active[i0], 0.9f64.powi(20), max_relative = 1e-12);
        assert_relative_eq!(0.9f64.powi(20), 0.1216, max_relative = 1e-3);
        // far bins untouched
        assert_eq!(out.active[0], d.active[0]);
        assert_relative_eq!(out.total_population(), d.total_population(), max_relative = 1e-12);
    }

    #[test]
    fn fifteen_pumps_burn_fifteen_holes() {
        let d = line();
        let sweep = PumpSweep::comb(0.0, 6.1, 15, 1.5, 0.999, 20);
        let out = d.apply_pump_sweep(&sweep).unwrap();
        let mut holes = 0;
        for &fp in &sweep.freqs {
            let i = out.grid.position(fp).round() as usize;
            if out.active[i] < 1e-6 * d.active[i] {
                holes += 1;
            }
            // the tooth halfway to the next hole survives
            let j = out.grid.position(fp + 3.05).round() as usize;
            assert!(out.active[j] > 0.5 * d.active[j]);
        }
        assert_eq!(holes, 15);
    }

    #[test]
    fn hyperfine_identity_and_enhancement() {
        let d = line().with_reservoir(7.0).unwrap();
        let (same, rep) = d.apply_hyperfine_init(350.0, 820.0, 1.0).unwrap();
        assert_eq!(same, d);
        assert!(!rep.clamped);

        let (up, rep) = d.apply_hyperfine_init(350.0, 820.0, 3.0).unwrap();
        assert!(!rep.clamped);
        assert_relative_eq!(rep.achieved_enhancement, 3.0, max_relative = 1e-12);
        assert_relative_eq!(up.active_at(0.0), 3.0, max_relative = 1e-12);
        assert_relative_eq!(up.total_population(), d.total_population(), max_relative = 1e-9);
    }

    #[test]
    fn hyperfine_clamps_on_truncated_grid() {
        let grid = FrequencyGrid::symmetric(400.0, 0.1).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
        let (out, rep) = d.apply_hyperfine_init(350.0, 820.0, 3.0).unwrap();
        assert!(rep.clamped);
        assert!(rep.achieved_enhancement > 1.0 && rep.achieved_enhancement < 3.0);
        let (a, b) = (d.total_population(), out.total_population());
        assert!(((a - b) / a).abs() < 1e-9, "{a} vs {b}");
        assert!(out.active.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn hyperfine_rejects_bad_sweep() {
        let d = line();
        assert!(d.apply_hyperfine_init(820.0, 350.0, 3.0).is_err());
        assert!(d.apply_hyperfine_init(350.0, 820.0, 0.5).is_err());
    }

    #[test]
    fn accumulated_comb_period_and_nodes() {
        let grid = FrequencyGrid::symmetric(20.0, 0.01).unwrap();
        let d = SpectralDensity::from_active(grid, vec![1.0; grid.len]).unwrap();
        let train = PulsePairTrain { pair_separation: Some(10.0), pulse_width: 20.0, n_pairs: 10_000, transfer_prob_peak: 2e-4 };
        let out = d.accumulate_afc(&train).unwrap();
        // node of cos^2 at f = 1/(2 t_s) = 0.05 MHz
        let i = out.grid.position(0.05).round() as usize;
        assert_relative_eq!(out.active[i], d.active[i], max_relative = 1e-12);
        // holes at multiples of the 0.1 MHz period
        for k in [-3i32, 0, 2] {
            let j = out.grid.position(0.1 * k as f64).round() as usize;
            assert!(out.active[j] < 0.2 * d.active[j]);
        }
    }

    #[test]
    fn accumulated_comb_closed_form_matches_loop() {
        let train = PulsePairTrain { pair_separation: Some(2.0), pulse_width: 20.0, n_pairs: 500, transfer_prob_peak: 0.01 };
        for f in [0.0, 0.13, 0.25, 1.7, -4.2] {
            let p = train.transfer_prob(f);
            let mut a = 1.0;
            for _ in 0..500 {
                a *= 1.0 - p;
            }
            assert_relative_eq!(train.survival(f), a, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_pulses_have_no_comb() {
        let grid = FrequencyGrid::symmetric(5.0, 0.01).unwrap();
        let flat = SpectralDensity::from_active(grid, vec![1.0; grid.len]).unwrap();
        let train = PulsePairTrain { pair_separation: None, pulse_width: 20.0, n_pairs: 100, transfer_prob_peak: 0.01 };
        let out = flat.accumulate_afc(&train).unwrap();
        // smooth, monotone away from center: no periodic modulation
        let c = out.grid.position(0.0).round() as usize;
        for i in c..out.len() - 1 {
            assert!(out.active[i + 1] >= out.active[i]);
        }
    }

    #[test]
    fn accumulated_comb_rejects_coarse_grid() {
        let grid = FrequencyGrid::symmetric(200.0, 0.02).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
        let train = PulsePairTrain { pair_separation: Some(10.0), pulse_width: 20.0, n_pairs: 10, transfer_prob_peak: 0.1 };
        assert!(d.accumulate_afc(&train).is_err());
    }

    #[test]
    fn blur_identity_and_constants() {
        let d = line();
        assert_eq!(d.apply_superhyperfine_blur(&SuperhyperfineBlur::gaussian(0.0)).unwrap(), d);
        let grid = FrequencyGrid::symmetric(10.0, 0.01).unwrap();
        let flat = SpectralDensity::from_active(grid, vec![0.7; grid.len]).unwrap();
        let out = flat.apply_superhyperfine_blur(&SuperhyperfineBlur::gaussian(1.0)).unwrap();
        for a in &out.active {
            assert_relative_eq!(*a, 0.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn blur_preserves_total_near_edges() {
        let grid = FrequencyGrid::symmetric(3.0, 0.01).unwrap();
        let active = (0..grid.len).map(|i| if i < 40 { 1.0 } else { 0.1 }).collect();
        let d = SpectralDensity::from_active(grid, active).unwrap();
        let out = d.apply_superhyperfine_blur(&SuperhyperfineBlur::gaussian(1.0)).unwrap();
        assert_relative_eq!(out.total_active(), d.total_active(), max_relative = 1e-9);
    }

    #[test]
    fn square_comb_duty_cycle() {
        let grid = FrequencyGrid::symmetric(60.0, 0.01).unwrap();
        let base = SpectralDensity::from_active(grid, vec![2.0; grid.len]).unwrap();
        let spec = CombSpec { delta: 6.1, tooth_width: 3.05, n_teeth: 15, center_offset: 0.0, background: 0.0, tooth_shape: ToothShape::Square };
        let out = base.comb_from_spec(&spec).unwrap();
        let band = spec.bandwidth() / 2.0;
        let mut inside = 0usize;
        let mut lit = 0usize;
        for i in 0..out.len() {
            let f = grid.freq(i);
            if (f.abs() - band).abs() < 1e-6 {
                continue;
            }
            if f.abs() > band {
                assert_eq!(out.active[i], 2.0);
                continue;
            }
            // independent predicate: distance to nearest tooth center
            let k = (f / 6.1).round();
            let on = (f - k * 6.1).abs() <= 3.05 / 2.0;
            let expected = if on { 2.0 } else { 0.0 };
            assert_eq!(out.active[i], expected, "bin {i} at {f}");
            inside += 1;
            lit += on as usize;
        }
        let duty = lit as f64 / inside as f64;
        assert!((duty - 0.5).abs() < 0.01, "duty {duty}");
    }

    #[test]
    fn comb_bandwidth_and_invisible_background() {
        let spec = CombSpec { delta: 6.1, tooth_width: 3.0, n_teeth: 15, center_offset: 0.0, background: 0.0, tooth_shape: ToothShape::Gaussian };
        assert_relative_eq!(spec.bandwidth(), 91.5, max_relative = 1e-12);
        let bad = CombSpec { background: 1.0, ..spec.clone() };
        assert!(bad.validate().is_err());
        // background -> 1 leaves the envelope
        let almost = CombSpec { background: 1.0 - 1e-15, ..spec.clone() };
        let d = line();
        let out = d.comb_from_spec(&almost).unwrap();
        for (a, b) in out.active.iter().zip(&d.active) {
            assert_relative_eq!(*a, *b, max_relative = 1e-14);
        }
    }

    #[test]
    fn comb_must_fit_grid() {
        let grid = FrequencyGrid::symmetric(200.0, 0.1).unwrap();
        let d = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
        let spec = CombSpec { delta: 30.0, tooth_width: 10.0, n_teeth: 15, center_offset: 0.0, background: 0.0, tooth_shape: ToothShape::Gaussian };
        assert!(d.comb_from_spec(&spec).is_err());
    }

    #[test]
    fn comb_spec_lists_every_violation() {
        let spec = CombSpec { delta: 1.0, tooth_width: 2.0, n_teeth: 1, center_offset: 0.0, background: 1.5, tooth_shape: ToothShape::Square };
        assert_eq!(spec.violations().len(), 3);
    }

    #[test]
    fn relax_limits() {
        let d = line();
        let pumped = d.apply_pump_sweep(&PumpSweep::comb(0.0, 6.1, 15, 1.5, 0.5, 20)).unwrap();
        assert_eq!(pumped.relax(0.0, 1740.0).unwrap(), pumped);

        let t = 29.0 * 60.0;
        let one = pumped.relax(t, t).unwrap();
        let i = pumped.grid.position(0.0).round() as usize;
        assert_relative_eq!(one.shelved[i], pumped.shelved[i] * (-1.0f64).exp(), max_relative = 1e-12);

        let inf = pumped.relax(1e9, t).unwrap();
        for (a, b) in inf.active.iter().zip(&d.active) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
        assert!(inf.shelved.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn relax_with_reservoir_returns_to_thermal_split() {
        let d = line().with_reservoir(7.0).unwrap();
        let (up, _) = d.apply_hyperfine_init(350.0, 820.0, 3.0).unwrap();
        let back = up.relax(1e9, 1740.0).unwrap();
        for (a, b) in back.active.iter().zip(&d.active) {
            assert_relative_eq!(*a, *b, max_relative = 1e-9);
        }
    }
}
