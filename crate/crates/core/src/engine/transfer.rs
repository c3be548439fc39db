use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use super::trace::{TimeTrace, TraceSpec};
use crate::cavity::{reflection_from_profile, CavityParams, CouplingProfile, HomogeneousParams};
use crate::ensemble::SpectralDensity;
use crate::error::{config, Result};

/// Tailored ensemble inside its cavity.
#[derive(Debug, Clone)]
pub struct Medium {
    pub density: SpectralDensity,
    pub cavity: CavityParams,
    pub homog: HomogeneousParams,
}

/// r(f) at `freqs` (MHz); same values as the cavity reflection spectrum.
pub fn transfer_function(medium: &Medium, freqs: &[f64]) -> Result<Vec<Complex64>> {
    let profile = CouplingProfile::compute(&medium.density, &medium.cavity, &medium.homog);
    reflection_from_profile(&profile, &medium.cavity, freqs)
}

/// Caches the coupling profile of one medium and the transfer arrays built
/// from it, keyed by trace sampling.
pub struct TransferCache {
    medium: Medium,
    profile: OnceLock<CouplingProfile>,
    arrays: Mutex<HashMap<(usize, u64), Arc<Vec<Complex64>>>>,
}

impl TransferCache {
    pub fn new(medium: Medium) -> Self {
        Self { medium, profile: OnceLock::new(), arrays: Mutex::new(HashMap::new()) }
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn profile(&self) -> &CouplingProfile {
        self.profile
            .get_or_init(|| CouplingProfile::compute(&self.medium.density, &self.medium.cavity, &self.medium.homog))
    }

    /// Transfer array on the conjugate grid of `spec`, in FFT order.
    pub fn for_trace(&self, spec: &TraceSpec) -> Result<Arc<Vec<Complex64>>> {
        let key = (spec.n_samples, spec.dt.to_bits());
        if let Some(hit) = self.arrays.lock().expect("transfer cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let r = Arc::new(reflection_from_profile(self.profile(), &self.medium.cavity, &spec.frequencies())?);
        self.arrays.lock().expect("transfer cache poisoned").insert(key, Arc::clone(&r));
        Ok(r)
    }
}

fn check_grid(input: &TimeTrace, transfer: &[Complex64]) -> Result<()> {
    if transfer.len() != input.len() {
        return config(format!(
            "transfer array has {} samples but the trace has {}",
            transfer.len(),
            input.len()
        ));
    }
    Ok(())
}

/// Filter `input` by `transfer` (FFT-ordered on the trace's conjugate grid).
pub fn propagate(input: &TimeTrace, transfer: &[Complex64]) -> Result<TimeTrace> {
    check_grid(input, transfer)?;
    let n = input.len();
    let mut planner = FftPlanner::new();
    let mut buf = input.samples.clone();
    planner.plan_fft_forward(n).process(&mut buf);
    for (b, r) in buf.iter_mut().zip(transfer) {
        *b *= r;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let norm = 1.0 / n as f64;
    buf.iter_mut().for_each(|b| *b *= norm);
    Ok(TimeTrace { t_start: input.t_start, dt: input.dt, samples: buf })
}

/// Independent O(N²) route: impulse response by direct inverse DFT, then a
/// circular convolution in the time domain.
pub fn time_domain_oracle(input: &TimeTrace, transfer: &[Complex64]) -> Result<TimeTrace> {
    check_grid(input, transfer)?;
    let n = input.len();
    let twiddle: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)).collect();
    let impulse: Vec<Complex64> = (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, r) in transfer.iter().enumerate() {
                acc += r * twiddle[(m * k) % n];
            }
            acc / n as f64
        })
        .collect();
    let samples = (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, x) in input.samples.iter().enumerate() {
                acc += impulse[(k + n - j) % n] * x;
            }
            acc
        })
        .collect();
    Ok(TimeTrace { t_start: input.t_start, dt: input.dt, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_trace(n: usize, rng: &mut ChaCha8Rng) -> TimeTrace {
        let samples = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        TimeTrace { t_start: -10.0, dt: 0.5, samples }
    }

    fn rel_l2(a: &TimeTrace, b: &TimeTrace) -> f64 {
        let num: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.samples.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn identity_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_trace(256, &mut rng);
        let one = vec![Complex64::new(1.0, 0.0); 256];
        assert!(rel_l2(&propagate(&x, &one).unwrap(), &x) < 1e-12);
        assert!(rel_l2(&time_domain_oracle(&x, &one).unwrap(), &x) < 1e-12);
    }

    #[test]
    fn delta_input_returns_impulse_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let r: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut delta = TimeTrace { t_start: 0.0, dt: 1.0, samples: vec![Complex64::new(0.0, 0.0); n] };
        delta.samples[0] = Complex64::new(1.0, 0.0);
        let out = time_domain_oracle(&delta, &r).unwrap();
        for k in 0..n {
            let mut h = Complex64::new(0.0, 0.0);
            for (m, rm) in r.iter().enumerate() {
                h += rm * Complex64::from_polar(1.0, 2.0 * PI * (m * k) as f64 / n as f64);
            }
            assert!((out.samples[k] - h / n as f64).norm() < 1e-12);
        }
    }

    #[test]
    fn random_instances_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for n in [97usize, 256, 1000] {
            let x = random_trace(n, &mut rng);
            let r: Vec<Complex64> = (0..n).map(|_| Complex64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..6.3))).collect();
            let fast = propagate(&x, &r).unwrap();
            let slow = time_domain_oracle(&x, &r).unwrap();
            assert!(rel_l2(&fast, &slow) < 1e-6);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_trace(16, &mut rng);
        assert!(propagate(&x, &[Complex64::new(1.0, 0.0); 8]).is_err());
        assert!(time_domain_oracle(&x, &[Complex64::new(1.0, 0.0); 8]).is_err());
    }
}
