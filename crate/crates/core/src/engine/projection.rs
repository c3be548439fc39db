//! Efficiency projection over doping, initialization, intrinsic Q and finesse.
//!
//! Each point builds a comb on a scaled thermal line, impedance-matches the
//! cavity to the tailored ensemble (`κ_in = κ_i + 2 W̃`, where `W̃` is the
//! period-averaged Re W) and runs the storage engine.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::storage::{run_afc_storage, PulseSpec, StorageSetup};
use super::trace::TraceSpec;
use super::transfer::{Medium, TransferCache};
use crate::cavity::{calibrate_tailored_coupling, cooperativity, mean_coupling_rate, CavityParams, HomogeneousParams};
use crate::ensemble::{CombSpec, FrequencyGrid, LineShape, SpectralDensity, ToothShape};
use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub doping_scale: f64,
    pub enhancement: f64,
    pub intrinsic_q: f64,
    pub finesse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub f_optical_ghz: f64,
    /// Loaded Q of the reference cavity in which the thermal cooperativity is defined.
    pub baseline_loaded_q: f64,
    /// Thermal line-center cooperativity at unit doping scale.
    pub baseline_cooperativity: f64,
    pub line_fwhm: f64,
    pub line_shape: LineShape,
    pub gamma_h: f64,
    pub grid_step: f64,
    pub delta: f64,
    pub n_teeth: usize,
    pub tooth_shape: ToothShape,
    pub pulse_fwhm: f64,
    pub trace: TraceSpec,
    pub doping_scales: Vec<f64>,
    pub enhancements: Vec<f64>,
    pub intrinsic_qs: Vec<f64>,
    pub finesses: Vec<f64>,
    /// Extra point reported as "paper-projection".
    pub named: Option<ProjectionParams>,
}

impl ProjectionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.trace.violations();
        if !(self.f_optical_ghz > 0.0 && self.baseline_loaded_q > 0.0) {
            v.push("projection optical frequency and baseline Q must be > 0".into());
        }
        if !(self.baseline_cooperativity > 0.0) {
            v.push(format!("baseline cooperativity must be > 0 (got {})", self.baseline_cooperativity));
        }
        if !(self.line_fwhm > 0.0 && self.gamma_h > 0.0 && self.grid_step > 0.0) {
            v.push("line_fwhm, gamma_h and grid_step must be > 0".into());
        }
        if !(self.pulse_fwhm > 0.0) {
            v.push(format!("pulse fwhm must be > 0 (got {})", self.pulse_fwhm));
        }
        let all = self.grid().chain(self.named);
        for p in all {
            if !(p.doping_scale > 0.0 && p.enhancement >= 1.0 && p.intrinsic_q > 0.0 && p.finesse > 1.0) {
                v.push(format!("invalid projection point {p:?}: need doping > 0, enhancement >= 1, Q_i > 0, finesse > 1"));
            }
        }
        if self.n_teeth < 2 || !(self.delta > 0.0) {
            v.push("projection comb needs delta > 0 and n_teeth >= 2".into());
        }
        v
    }

    /// Cross product in (doping, enhancement, Q_i, finesse) order.
    pub fn grid(&self) -> impl Iterator<Item = ProjectionParams> + '_ {
        self.doping_scales.iter().flat_map(move |&d| {
            self.enhancements.iter().flat_map(move |&e| {
                self.intrinsic_qs.iter().flat_map(move |&q| {
                    self.finesses.iter().map(move |&f| ProjectionParams {
                        doping_scale: d,
                        enhancement: e,
                        intrinsic_q: q,
                        finesse: f,
                    })
                })
            })
        })
    }

    fn density_grid(&self) -> Result<FrequencyGrid> {
        let half = (self.trace.nyquist_mhz() + self.grid_step).max(self.line_fwhm);
        FrequencyGrid::symmetric(half, self.grid_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    #[serde(flatten)]
    pub params: ProjectionParams,
    pub tailored_cooperativity: f64,
    pub kappa_in: f64,
    pub kappa_i: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTable {
    pub points: Vec<ProjectionPoint>,
    pub argmax: Option<usize>,
    pub named: Option<ProjectionPoint>,
}

struct Baseline {
    envelope: SpectralDensity,
    homog: HomogeneousParams,
    coupling_scale: f64,
}

fn baseline(cfg: &ProjectionConfig) -> Result<Baseline> {
    let grid = cfg.density_grid()?;
    let envelope = SpectralDensity::init_inhomogeneous(cfg.line_fwhm, 1.0, cfg.line_shape, grid)?;
    let homog = HomogeneousParams::new(cfg.gamma_h)?;
    let reference = CavityParams::from_loaded_q(cfg.f_optical_ghz, cfg.baseline_loaded_q, 1.0)?;
    let unit = CavityParams { coupling_scale: 1.0, ..reference };
    let c_unit = cooperativity(&envelope, &unit, &homog)?;
    Ok(Baseline { envelope, homog, coupling_scale: cfg.baseline_cooperativity / c_unit })
}

fn evaluate(cfg: &ProjectionConfig, base: &Baseline, p: ProjectionParams) -> Result<ProjectionPoint> {
    let spec = CombSpec {
        delta: cfg.delta,
        tooth_width: cfg.delta / p.finesse,
        n_teeth: cfg.n_teeth,
        center_offset: 0.0,
        background: 0.0,
        tooth_shape: cfg.tooth_shape,
    };
    let density = base.envelope.scaled(p.doping_scale * p.enhancement).comb_from_spec(&spec)?;
    let probe = CavityParams {
        omega_c: 0.0,
        kappa_in: 1.0,
        kappa_i: 0.0,
        coupling_scale: base.coupling_scale,
        f_optical_ghz: cfg.f_optical_ghz,
    };
    let w_mean = mean_coupling_rate(&density, &probe, &base.homog, 0.0, cfg.delta)?;
    let kappa_i = cfg.f_optical_ghz * 1e3 / p.intrinsic_q;
    let kappa_in = kappa_i + 2.0 * w_mean;
    let cavity = CavityParams { kappa_in, kappa_i, ..probe };
    let cache = TransferCache::new(Medium { density, cavity, homog: base.homog });
    let setup = StorageSetup {
        trace: cfg.trace,
        pulse: PulseSpec { fwhm: cfg.pulse_fwhm, center: 0.0, carrier_mhz: 0.0 },
        delta: cfg.delta,
    };
    let res = run_afc_storage(&cache, &setup)?;
    Ok(ProjectionPoint {
        params: p,
        tailored_cooperativity: 2.0 * w_mean / cavity.kappa(),
        kappa_in,
        kappa_i,
        efficiency: res.efficiency,
    })
}

/// Evaluate every grid point (in parallel) plus the named point.
pub fn project_efficiency(cfg: &ProjectionConfig) -> Result<ProjectionTable> {
    let v = cfg.violations();
    if !v.is_empty() {
        return config(v.join("; "));
    }
    let base = baseline(cfg)?;
    let params: Vec<ProjectionParams> = cfg.grid().collect();
    let points = params
        .par_iter()
        .map(|&p| evaluate(cfg, &base, p))
        .collect::<Result<Vec<_>>>()?;
    let argmax = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.efficiency.total_cmp(&b.1.efficiency))
        .map(|(i, _)| i);
    let named = cfg.named.map(|p| evaluate(cfg, &base, p)).transpose()?;
    Ok(ProjectionTable { points, argmax, named })
}

/// Storage efficiency as the ensemble coupling is rescaled so the tailored
/// cooperativity (Re W averaged over one period at `center`) hits each target.
pub fn efficiency_vs_tailored_cooperativity(
    medium: &Medium,
    setup: &StorageSetup,
    center: f64,
    targets: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let cav = calibrate_tailored_coupling(&medium.density, &medium.cavity, &medium.homog, center, setup.delta, 1.0)?;
    targets
        .par_iter()
        .map(|&c| {
            if !(c >= 0.0) {
                return config(format!("tailored cooperativity must be >= 0 (got {c})"));
            }
            let cavity = CavityParams { coupling_scale: cav.coupling_scale * c, ..cav };
            let cache = TransferCache::new(Medium { cavity, ..medium.clone() });
            Ok((c, run_afc_storage(&cache, setup)?.efficiency))
        })
        .collect()
}
