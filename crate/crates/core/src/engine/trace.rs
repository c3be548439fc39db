use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{config, Result};

/// Sampling of a trace: `n_samples` points from `t_start` at step `dt` (ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub t_start: f64,
    pub dt: f64,
    pub n_samples: usize,
}

impl TraceSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt > 0.0) {
            out.push(format!("trace dt must be > 0 (got {})", self.dt));
        }
        if self.n_samples < 2 {
            out.push(format!("trace needs at least 2 samples (got {})", self.n_samples));
        }
        out
    }

    pub fn span(&self) -> f64 {
        self.dt * self.n_samples as f64
    }

    /// Nyquist frequency in MHz.
    pub fn nyquist_mhz(&self) -> f64 {
        0.5e3 / self.dt
    }

    /// Conjugate frequency grid in FFT order (MHz).
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_samples as i64;
        let df = 1e3 / (self.dt * self.n_samples as f64);
        (0..n).map(|k| if k < (n + 1) / 2 { k } else { k - n } as f64 * df).collect()
    }
}

/// Uniformly sampled complex field envelope. `Σ|E|²·dt` is the pulse energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub t_start: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
}

impl TimeTrace {
    pub fn zeros(spec: TraceSpec) -> Result<Self> {
        let v = spec.violations();
        if !v.is_empty() {
            return config(v.join("; "));
        }
        Ok(Self { t_start: spec.t_start, dt: spec.dt, samples: vec![Complex64::new(0.0, 0.0); spec.n_samples] })
    }

    pub fn spec(&self) -> TraceSpec {
        TraceSpec { t_start: self.t_start, dt: self.dt, n_samples: self.samples.len() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|e| e.norm_sqr()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|e| e.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Energy in `[t0, t1]` (sample times inclusive).
    pub fn energy_in(&self, t0: f64, t1: f64) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = self.time(*k);
                t >= t0 && t <= t1
            })
            .map(|(_, e)| e.norm_sqr())
            .sum::<f64>()
            * self.dt
    }

    /// Add a Gaussian pulse with intensity FWHM `fwhm` (ns) centered at `t0`,
    /// complex amplitude `amp` and carrier detuning `carrier_mhz`.
    pub fn add_gaussian(&mut self, t0: f64, fwhm: f64, amp: Complex64, carrier_mhz: f64) {
        let a = 2.0 * LN_2 / (fwhm * fwhm);
        for k in 0..self.len() {
            let t = self.time(k);
            let x = t - t0;
            let env = (-a * x * x).exp();
            if env > 1e-300 {
                let phase = 2.0 * PI * carrier_mhz * 1e-3 * t;
                self.samples[k] += amp * env * Complex64::from_polar(1.0, phase);
            }
        }
    }

    /// `Σ|E|²` over the trace times `dt`, normalized so a Gaussian of unit
    /// peak amplitude and FWHM τ carries energy `τ·sqrt(π/(4 ln 2))`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { t_start: self.t_start, dt: self.dt, samples: self.samples.iter().map(|e| e * factor).collect() }
    }

    pub fn axpy(&self, a: Complex64, other: &TimeTrace, b: Complex64) -> Result<Self> {
        if other.len() != self.len() {
            return config("trace lengths differ");
        }
        Ok(Self {
            t_start: self.t_start,
            dt: self.dt,
            samples: self.samples.iter().zip(&other.samples).map(|(x, y)| a * x + b * y).collect(),
        })
    }
}
