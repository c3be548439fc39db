//! Photon counting for weak coherent inputs and the estimators built on it.
//!
//! Counts in a gated bin are Poisson with mean
//! `n̄_bin · η · shots + dark_rate · window · shots`. Every bin draws from its
//! own ChaCha stream derived from the master seed, so results do not depend
//! on how bins are scheduled across threads.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::engine::TimeTrace;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Dark count rate (Hz).
    pub dark_rate: f64,
    /// Gate length per shot and bin (ns).
    pub window: f64,
    pub shots: u64,
    pub seed: u64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 0.6, dark_rate: 18.5, window: 37_800.0, shots: 10_000, seed: 0 }
    }
}

impl DetectorModel {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.efficiency) {
            v.push(format!("detector efficiency must be in [0, 1] (got {})", self.efficiency));
        }
        if !(self.dark_rate >= 0.0) {
            v.push(format!("detector dark_rate must be >= 0 (got {})", self.dark_rate));
        }
        if !(self.window > 0.0) {
            v.push(format!("detector window must be > 0 (got {})", self.window));
        }
        if self.shots < 1 {
            v.push("detector shots must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            config(v.join("; "))
        }
    }

    /// Dark click probability per shot and bin.
    pub fn dark_per_shot(&self) -> f64 {
        self.dark_rate * self.window * 1e-9
    }

    /// Expected dark counts per bin over all shots.
    pub fn dark_mean(&self) -> f64 {
        self.dark_per_shot() * self.shots as f64
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub bin_edges: Vec<(f64, f64)>,
    pub counts: Vec<u64>,
    pub expected_means: Vec<f64>,
    pub model: DetectorModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBinKind {
    Early,
    Late,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinState {
    pub kind: TimeBinKind,
    pub mean_photons: f64,
}

impl TimeBinState {
    pub fn new(kind: TimeBinKind, mean_photons: f64) -> Result<Self> {
        if !(mean_photons > 0.0) {
            return config(format!("mean photon number must be > 0 (got {mean_photons})"));
        }
        Ok(Self { kind, mean_photons })
    }

    /// (early, late) amplitudes of the normalized state.
    pub fn amplitudes(&self) -> (f64, f64) {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self.kind {
            TimeBinKind::Early => (1.0, 0.0),
            TimeBinKind::Late => (0.0, 1.0),
            TimeBinKind::Plus => (h, h),
            TimeBinKind::Minus => (h, -h),
        }
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Expected counts per bin, without sampling.
pub fn expected_counts(trace: &TimeTrace, photons_per_energy: f64, model: &DetectorModel, bins: &[(f64, f64)]) -> Result<Vec<f64>> {
    model.validate()?;
    if !(photons_per_energy >= 0.0) {
        return config(format!("photon scale must be >= 0 (got {photons_per_energy})"));
    }
    let shots = model.shots as f64;
    bins.iter()
        .map(|&(a, b)| {
            if !(a < b) || a < trace.t_start || b > trace.t_end() {
                return config(format!(
                    "detection bin [{a}, {b}] ns is empty or outside the trace [{}, {}] ns",
                    trace.t_start,
                    trace.t_end()
                ));
            }
            let n_bin = photons_per_energy * trace.energy_in(a, b);
            Ok(n_bin * model.efficiency * shots + model.dark_mean())
        })
        .collect()
}

/// Poisson counts in each bin; `photons_per_energy` maps `Σ|E|²dt` to photons
/// (for a unit-energy input it is just n̄).
pub fn simulate_counts(trace: &TimeTrace, photons_per_energy: f64, model: &DetectorModel, bins: &[(f64, f64)]) -> Result<DetectionRecord> {
    let expected_means = expected_counts(trace, photons_per_energy, model, bins)?;
    let counts = expected_means
        .par_iter()
        .enumerate()
        .map(|(i, &m)| poisson(m, &mut model.rng(i as u64)))
        .collect();
    Ok(DetectionRecord { bin_edges: bins.to_vec(), counts, expected_means, model: *model })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub detuning: f64,
    pub counts: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeTable {
    /// Known fringe period (MHz).
    pub period: f64,
    pub points: Vec<FringePoint>,
}

/// Overlap-bin counts versus second-comb detuning, with √N errors.
pub fn visibility_fringe(sweep: &[(f64, DetectionRecord)], overlap_bin: usize, period: f64) -> Result<FringeTable> {
    if !(period > 0.0) {
        return config(format!("fringe period must be > 0 (got {period})"));
    }
    if sweep.len() < 8 {
        return Err(Error::InsufficientData(format!("fringe needs >= 8 sweep points (got {})", sweep.len())));
    }
    let lo = sweep.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < period / 2.0 {
        return Err(Error::InsufficientData(format!(
            "sweep span {:.3} MHz is shorter than half the period {period} MHz",
            hi - lo
        )));
    }
    let points = sweep
        .iter()
        .map(|(d, rec)| {
            let n = *rec
                .counts
                .get(overlap_bin)
                .ok_or_else(|| Error::Config(format!("overlap bin {overlap_bin} not in record")))? as f64;
            Ok(FringePoint { detuning: *d, counts: n, error: n.sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FringeTable { period, points })
}

/// `N(x) = offset + amplitude·cos(2πx/P + phase)`, with `V = amplitude / (offset − baseline)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub visibility: f64,
    pub visibility_err: f64,
    pub phase: f64,
    pub phase_err: f64,
    pub offset: f64,
    pub offset_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub baseline: f64,
    pub residual_norm: f64,
}

impl SinusoidFit {
    /// Detuning of the fringe minimum in `[0, period)`.
    pub fn minimum(&self, period: f64) -> f64 {
        let x = (PI - self.phase) * period / (2.0 * PI);
        x.rem_euclid(period)
    }
}

struct Linear {
    coef: Vector3<f64>,
    cov: Matrix3<f64>,
    residual_norm: f64,
}

fn weighted_sinusoid(table: &FringeTable) -> Result<Linear> {
    let n = table.points.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("sinusoid fit needs >= 4 points (got {n})")));
    }
    let rows: Vec<Vector3<f64>> = table
        .points
        .iter()
        .map(|p| {
            let th = 2.0 * PI * p.detuning / table.period;
            Vector3::new(1.0, th.cos(), th.sin())
        })
        .collect();
    let y: Vec<f64> = table.points.iter().map(|p| p.counts).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let floor = 1e-3 * mean.abs().max(f64::MIN_POSITIVE);
    let mut weights = vec![1.0; n];
    let mut coef = Vector3::zeros();
    let mut normal = Matrix3::zeros();
    // Iteratively reweighted: Poisson variance equals the model mean.
    for _ in 0..6 {
        normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for ((x, &yi), &w) in rows.iter().zip(&y).zip(&weights) {
            normal += w * x * x.transpose();
            rhs += w * yi * x;
        }
        let scale = normal.diagonal().max();
        if !(scale > 0.0) || normal.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::FitFailure {
                reason: "degenerate design matrix (detunings do not resolve the sinusoid)".into(),
                best_params: vec![mean, 0.0, 0.0],
                residual_norm: f64::NAN,
                iterations: 0,
            });
        }
        coef = normal.try_inverse().expect("checked determinant") * rhs;
        for (w, x) in weights.iter_mut().zip(&rows) {
            *w = 1.0 / coef.dot(x).max(floor);
        }
    }
    // Covariance with Poisson variances at the final model.
    let cov = normal.try_inverse().expect("checked determinant");
    let residual_norm = rows.iter().zip(&y).map(|(x, yi)| (yi - coef.dot(x)).powi(2)).sum::<f64>().sqrt();
    Ok(Linear { coef, cov, residual_norm })
}

fn sinusoid_with_baseline(table: &FringeTable, baseline: f64) -> Result<SinusoidFit> {
    let lin = weighted_sinusoid(table)?;
    let (m, u, w) = (lin.coef[0], lin.coef[1], lin.coef[2]);
    let a = u.hypot(w);
    let span = m - baseline;
    if !(baseline >= 0.0) || !(span > 0.0) {
        return Err(Error::InvalidBaseline(format!(
            "baseline {baseline} must be >= 0 and below the fitted offset {m:.4}"
        )));
    }
    let v_raw = a / span;
    // Gradients of (V, a, φ) with respect to (M, u, w).
    let (grad_v, grad_a, grad_phi) = if a > 0.0 {
        (
            Vector3::new(-a / (span * span), u / (a * span), w / (a * span)),
            Vector3::new(0.0, u / a, w / a),
            Vector3::new(0.0, w / (a * a), -u / (a * a)),
        )
    } else {
        let s = 1.0 / std::f64::consts::SQRT_2;
        (Vector3::new(0.0, s / span, s / span), Vector3::new(0.0, s, s), Vector3::zeros())
    };
    let var = |g: &Vector3<f64>| (g.transpose() * lin.cov * g)[0].max(0.0).sqrt();
    Ok(SinusoidFit {
        visibility: v_raw.clamp(0.0, 1.0),
        visibility_err: var(&grad_v),
        phase: (-w).atan2(u),
        phase_err: var(&grad_phi),
        offset: m,
        offset_err: lin.cov[(0, 0)].max(0.0).sqrt(),
        amplitude: a,
        amplitude_err: var(&grad_a),
        baseline,
        residual_norm: lin.residual_norm,
    })
}

/// Weighted least-squares sinusoid with known period; V clamped to [0, 1].
pub fn fit_sinusoid(table: &FringeTable) -> Result<SinusoidFit> {
    sinusoid_with_baseline(table, 0.0)
}

/// Visibility after removing a constant dark baseline from every point.
pub fn dark_subtracted_visibility(table: &FringeTable, baseline: f64) -> Result<SinusoidFit> {
    sinusoid_with_baseline(table, baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourStateRecords {
    pub early: DetectionRecord,
    pub late: DetectionRecord,
    pub plus: DetectionRecord,
    pub minus: DetectionRecord,
}

/// Bin indices: unambiguous early and late echo slots and the overlap slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBins {
    pub early: usize,
    pub late: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub f_z: f64,
    pub f_z_err: f64,
    pub f_x: f64,
    pub f_x_err: f64,
    pub f_mean: f64,
    pub f_mean_err: f64,
}

fn ratio_with_err(c: f64, w: f64) -> (f64, f64) {
    let t = c + w;
    let f = c / t;
    // √N errors on independent counts.
    let err = ((w / (t * t)).powi(2) * c + (c / (t * t)).powi(2) * w).sqrt();
    (f, err)
}

pub fn fidelity_four_states(records: &FourStateRecords, bins: SlotBins) -> Result<FidelityReport> {
    let all = [&records.early, &records.late, &records.plus, &records.minus];
    for r in &all[1..] {
        // Seeds may differ per state; the detector itself may not.
        let same = DetectorModel { seed: records.early.model.seed, ..r.model } == records.early.model;
        if !same || r.bin_edges != records.early.bin_edges {
            return config("four-state records must share detector model and binning");
        }
    }
    let get = |r: &DetectionRecord, i: usize| -> Result<f64> {
        r.counts
            .get(i)
            .map(|&c| c as f64)
            .ok_or_else(|| Error::Config(format!("bin {i} not present in record")))
    };
    let z_correct = get(&records.early, bins.early)? + get(&records.late, bins.late)?;
    let z_wrong = get(&records.early, bins.late)? + get(&records.late, bins.early)?;
    let x_correct = get(&records.plus, bins.overlap)?;
    let x_wrong = get(&records.minus, bins.overlap)?;
    if z_correct + z_wrong <= 0.0 {
        return Err(Error::InsufficientData("no counts in the early/late slots".into()));
    }
    if x_correct + x_wrong <= 0.0 {
        return Err(Error::InsufficientData("no counts in the overlap slot".into()));
    }
    let (f_z, f_z_err) = ratio_with_err(z_correct, z_wrong);
    let (f_x, f_x_err) = ratio_with_err(x_correct, x_wrong);
    Ok(FidelityReport {
        f_z,
        f_z_err,
        f_x,
        f_x_err,
        f_mean: (f_z + 2.0 * f_x) / 3.0,
        f_mean_err: (f_z_err.powi(2) + 4.0 * f_x_err.powi(2)).sqrt() / 3.0,
    })
}

/// Correct/wrong click counts of one basis at one intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCounts {
    pub correct: f64,
    pub wrong: f64,
    pub shots: f64,
}

impl BasisCounts {
    pub fn gain(&self) -> f64 {
        (self.correct + self.wrong) / self.shots
    }

    pub fn error_rate(&self) -> f64 {
        self.wrong / (self.correct + self.wrong)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyInput {
    pub mu: f64,
    pub nu: f64,
    pub signal: BasisCounts,
    pub decoy: BasisCounts,
    /// Vacuum clicks summed over both outcome bins, and the shots they came from.
    pub dark_counts: f64,
    pub dark_shots: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBound {
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub fidelity: f64,
    pub fidelity_err: f64,
    /// Raw estimate fell outside [0, 1] before clamping.
    pub inconsistent: bool,
    /// Bound does not beat the classical 2/3.
    pub classical: bool,
}

/// Unclamped (Y₁ lower bound, e₁ upper bound).
fn decoy_raw(mu: f64, nu: f64, q_mu: f64, q_nu: f64, e_nu: f64, y0: f64) -> (f64, f64) {
    let y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
    let e1 = (e_nu * q_nu * nu.exp() - 0.5 * y0) / (y1 * nu);
    (y1, e1)
}

/// Two-intensity decoy-state bound on the single-photon fidelity of one basis.
pub fn decoy_bound(input: &DecoyInput) -> Result<DecoyBound> {
    let DecoyInput { mu, nu, signal, decoy, dark_counts, dark_shots } = *input;
    if !(mu > nu && nu > 0.0) {
        return config(format!("decoy intensities need mu > nu > 0 (got {mu}, {nu})"));
    }
    if !(signal.shots > 0.0 && decoy.shots > 0.0 && dark_shots > 0.0) {
        return config("decoy inputs need positive shot counts");
    }
    let counts = [signal.correct, signal.wrong, decoy.correct, decoy.wrong, dark_counts];
    if counts.iter().any(|c| !(*c >= 0.0)) {
        return config("decoy counts must be >= 0");
    }
    if decoy.correct + decoy.wrong <= 0.0 {
        return Err(Error::InsufficientData("no decoy-intensity counts".into()));
    }
    let eval = |c: &[f64; 5]| {
        let q_mu = (c[0] + c[1]) / signal.shots;
        let q_nu = (c[2] + c[3]) / decoy.shots;
        let e_nu = c[3] / (c[2] + c[3]);
        decoy_raw(mu, nu, q_mu, q_nu, e_nu, c[4] / dark_shots)
    };
    let (y1, e1) = eval(&counts);
    let for_bound = |y1: f64, e1: f64| if y1 > 0.0 { 1.0 - e1 } else { 0.0 };
    let f = for_bound(y1, e1);
    // First-order propagation of √N count errors through central differences.
    let mut var = 0.0;
    for k in 0..5 {
        let sigma = counts[k].sqrt();
        if sigma == 0.0 {
            continue;
        }
        let h = (0.01 * sigma).max(1e-6);
        let (mut up, mut dn) = (counts, counts);
        up[k] += h;
        dn[k] = (dn[k] - h).max(0.0);
        let (yu, eu) = eval(&up);
        let (yd, ed) = eval(&dn);
        let d = (for_bound(yu, eu) - for_bound(yd, ed)) / (up[k] - dn[k]);
        var += (d * sigma).powi(2);
    }
    let inconsistent = !(y1 > 0.0 && y1 <= 1.0 + 1e-12) || !(0.0..=1.0).contains(&e1);
    let fidelity = f.clamp(0.0, 1.0);
    Ok(DecoyBound {
        y1_lower: y1.clamp(0.0, 1.0),
        e1_upper: e1.clamp(0.0, 1.0),
        fidelity,
        fidelity_err: var.sqrt(),
        inconsistent,
        classical: fidelity <= 2.0 / 3.0,
    })
}

/// F = (F_z + 2 F_x)/3 from the two per-basis bounds.
pub fn combined_decoy_fidelity(z: &DecoyBound, x: &DecoyBound) -> (f64, f64) {
    let f = (z.fidelity + 2.0 * x.fidelity) / 3.0;
    let err = (z.fidelity_err.powi(2) + 4.0 * x.fidelity_err.powi(2)).sqrt() / 3.0;
    (f, err)
}

/// Standard-normal quantile for a one-sided 99 % limit.
pub const Z_ONE_SIDED_99: f64 = 2.326_347_874_040_841;

/// One-sided lower confidence limit `z` standard errors below the estimate.
pub fn confidence_lower(estimate: f64, err: f64, z: f64) -> f64 {
    (estimate - z * err).max(0.0)
}

/// Photon-number-resolved channel: each photon independently lands in the
/// correct bin with `p_correct`, the wrong bin with `p_wrong`, or is lost;
/// each bin also fires with dark probability `dark` per shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockChannel {
    pub p_correct: f64,
    pub p_wrong: f64,
    pub dark: f64,
}

impl FockChannel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_correct >= 0.0 && self.p_wrong >= 0.0 && self.p_correct + self.p_wrong <= 1.0 && (0.0..=1.0).contains(&self.dark);
        if ok {
            Ok(())
        } else {
            config(format!("invalid Fock channel {self:?}"))
        }
    }

    /// Per-shot probabilities of (correct only, wrong only, both) given n photons.
    fn click_probs(&self, n: u64) -> [f64; 3] {
        let d = 1.0 - self.dark;
        let n = n as i32;
        let none = (1.0 - self.p_correct - self.p_wrong).powi(n) * d * d;
        let no_c = (1.0 - self.p_correct).powi(n) * d;
        let no_w = (1.0 - self.p_wrong).powi(n) * d;
        let c_only = (no_w - none).max(0.0);
        let w_only = (no_c - none).max(0.0);
        let both = (1.0 - no_c - no_w + none).max(0.0);
        [c_only, w_only, both]
    }

    /// True single-photon fidelity `P(c|1) / (P(c|1) + P(w|1))` on click events.
    pub fn single_photon_fidelity(&self) -> f64 {
        let pc = 1.0 - (1.0 - self.p_correct) * (1.0 - self.dark);
        let pw = 1.0 - (1.0 - self.p_wrong) * (1.0 - self.dark);
        pc / (pc + pw)
    }

    /// Sample one run of `shots` weak coherent pulses of mean `mu`.
    ///
    /// Shots are grouped by photon number (sequential binomials over the
    /// Poisson weights), and each group is split into click outcomes by
    /// sequential binomials over the exact per-shot probabilities.
    pub fn sample(&self, mu: f64, shots: u64, rng: &mut impl Rng) -> BasisCounts {
        let mut remaining = shots;
        let mut tail = 1.0;
        let mut p_n = (-mu).exp();
        let (mut correct, mut wrong) = (0u64, 0u64);
        let mut n = 0u64;
        while remaining > 0 {
            let group = if tail <= p_n || tail <= 0.0 {
                remaining
            } else {
                binomial(remaining, (p_n / tail).min(1.0), rng)
            };
            remaining -= group;
            tail -= p_n;
            if group > 0 {
                let [c, w, b] = self.click_probs(n);
                let nc = binomial(group, c, rng);
                let rest = group - nc;
                let nw = binomial(rest, if 1.0 - c > 0.0 { (w / (1.0 - c)).min(1.0) } else { 0.0 }, rng);
                let rest = rest - nw;
                let denom = 1.0 - c - w;
                let nb = binomial(rest, if denom > 0.0 { (b / denom).min(1.0) } else { 0.0 }, rng);
                correct += nc + nb;
                wrong += nw + nb;
            }
            n += 1;
            p_n *= mu / n as f64;
            if n > 200 {
                break;
            }
        }
        BasisCounts { correct: correct as f64, wrong: wrong as f64, shots: shots as f64 }
    }

    /// Vacuum-shot clicks summed over both bins.
    pub fn sample_dark(&self, shots: u64, rng: &mut impl Rng) -> f64 {
        (binomial(shots, self.dark, rng) + binomial(shots, self.dark, rng)) as f64
    }
}

fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// One seeded decoy experiment on a Fock channel: signal, decoy and vacuum runs.
pub fn fock_decoy_trial(channel: &FockChannel, mu: f64, nu: f64, shots: u64, seed: u64) -> DecoyInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = channel.sample(mu, shots, &mut rng);
    let decoy = channel.sample(nu, shots, &mut rng);
    let dark_counts = channel.sample_dark(shots, &mut rng);
    DecoyInput { mu, nu, signal, decoy, dark_counts, dark_shots: shots as f64 }
}
