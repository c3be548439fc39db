//! Scenario files: one TOML document per experiment.
//!
//! Every section maps onto a core type. Loading collects *all* invariant
//! violations so a broken file is reported in one pass.

use afc_core::cavity::HomogeneousParams;
use afc_core::detection::DetectorModel;
use afc_core::engine::{ProjectionConfig, TraceSpec};
use afc_core::ensemble::{CombSpec, LineShape, PulsePairTrain, PumpSweep, SuperhyperfineBlur, ToothShape};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    ReflectionFit,
    Storage,
    Multimode,
    DoubleComb,
    Fidelity,
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub ensemble: Option<EnsembleCfg>,
    pub cavity: Option<CavityCfg>,
    #[serde(default)]
    pub recipe: Vec<Step>,
    pub input: Option<InputCfg>,
    pub multimode: Option<MultimodeCfg>,
    pub double_comb: Option<DoubleCombCfg>,
    pub detector: Option<DetectorCfg>,
    pub fidelity: Option<FidelityCfg>,
    pub reflection_fit: Option<ReflectionFitCfg>,
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub expected: Vec<Expectation>,
}

fn default_one() -> f64 {
    1.0
}

fn default_half_span() -> f64 {
    400.0
}

fn default_f_optical() -> f64 {
    194_816.0
}

fn default_lorentzian() -> LineShape {
    LineShape::Lorentzian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleCfg {
    /// Inhomogeneous FWHM (MHz).
    pub line_fwhm: f64,
    #[serde(default = "default_one")]
    pub peak_density: f64,
    #[serde(default = "default_lorentzian")]
    pub line_shape: LineShape,
    pub grid_step: f64,
    /// Widened automatically to cover the trace bandwidth.
    #[serde(default = "default_half_span")]
    pub grid_half_span: f64,
    #[serde(default)]
    pub reservoir_ratio: f64,
    /// Optical T₂ (μs); ignored when `gamma_h` is given.
    pub t2_us: Option<f64>,
    pub gamma_h: Option<f64>,
}

impl EnsembleCfg {
    pub fn homogeneous(&self) -> afc_core::Result<HomogeneousParams> {
        match (self.gamma_h, self.t2_us) {
            (Some(g), _) => HomogeneousParams::new(g),
            (None, Some(t2)) => HomogeneousParams::from_t2_us(t2),
            (None, None) => HomogeneousParams::from_t2_us(149.0),
        }
    }

    fn violations(&self, out: &mut Vec<String>) {
        if !(self.line_fwhm > 0.0) {
            out.push(format!("ensemble.line_fwhm must be > 0 (got {})", self.line_fwhm));
        }
        if !(self.peak_density >= 0.0) {
            out.push(format!("ensemble.peak_density must be >= 0 (got {})", self.peak_density));
        }
        if !(self.grid_step > 0.0) {
            out.push(format!("ensemble.grid_step must be > 0 (got {})", self.grid_step));
        }
        if !(2.0 * self.grid_half_span >= self.line_fwhm) {
            out.push(format!(
                "ensemble grid span {} MHz is narrower than the line FWHM {} MHz",
                2.0 * self.grid_half_span,
                self.line_fwhm
            ));
        }
        if !(self.reservoir_ratio >= 0.0) {
            out.push(format!("ensemble.reservoir_ratio must be >= 0 (got {})", self.reservoir_ratio));
        }
        if let Err(e) = self.homogeneous() {
            out.push(format!("ensemble homogeneous linewidth: {e}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityCfg {
    #[serde(default = "default_f_optical")]
    pub f_optical_ghz: f64,
    pub loaded_q: f64,
    /// κ_in / κ; 1 means no intrinsic loss.
    pub input_fraction: f64,
    #[serde(default)]
    pub omega_c: f64,
    /// Line-center cooperativity of the untailored line; fixes the coupling scale.
    pub thermal_cooperativity: f64,
    /// When set, the coupling is rescaled after tailoring so the
    /// period-averaged cooperativity equals this value.
    pub tailored_cooperativity: Option<f64>,
}

impl CavityCfg {
    fn violations(&self, out: &mut Vec<String>) {
        if !(self.f_optical_ghz > 0.0) {
            out.push(format!("cavity.f_optical_ghz must be > 0 (got {})", self.f_optical_ghz));
        }
        if !(self.loaded_q > 0.0) {
            out.push(format!("cavity.loaded_q must be > 0 (got {})", self.loaded_q));
        }
        if !(self.input_fraction > 0.0 && self.input_fraction <= 1.0) {
            out.push(format!(
                "cavity.input_fraction must be in (0, 1] so that kappa_in > 0 and kappa_i >= 0 (got {})",
                self.input_fraction
            ));
        }
        if !(self.thermal_cooperativity > 0.0) {
            out.push(format!("cavity.thermal_cooperativity must be > 0 (got {})", self.thermal_cooperativity));
        }
        if let Some(c) = self.tailored_cooperativity {
            if !(c >= 0.0) {
                out.push(format!("cavity.tailored_cooperativity must be >= 0 (got {c})"));
            }
        }
    }
}

/// One tailoring step; steps run in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    HyperfineInit {
        sweep_lo: f64,
        sweep_hi: f64,
        enhancement: f64,
    },
    PumpSweep {
        #[serde(default)]
        center: f64,
        spacing: f64,
        count: usize,
        width: f64,
        transfer_prob: f64,
        n_pump: u32,
    },
    Accumulate {
        /// μs; omit for single pulses.
        pair_separation: Option<f64>,
        pulse_width: f64,
        n_pairs: u32,
        transfer_prob_peak: f64,
    },
    Blur {
        kernel_fwhm: f64,
        #[serde(default)]
        retained_fraction: f64,
    },
    Comb {
        delta: f64,
        tooth_width: f64,
        n_teeth: usize,
        #[serde(default)]
        center_offset: f64,
        #[serde(default)]
        background: f64,
        tooth_shape: ToothShape,
    },
    Relax {
        elapsed_s: f64,
        shelf_lifetime_s: f64,
    },
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::HyperfineInit { .. } => "hyperfine_init",
            Step::PumpSweep { .. } => "pump_sweep",
            Step::Accumulate { .. } => "accumulate",
            Step::Blur { .. } => "blur",
            Step::Comb { .. } => "comb",
            Step::Relax { .. } => "relax",
        }
    }

    pub fn pump(&self) -> Option<PumpSweep> {
        match *self {
            Step::PumpSweep { center, spacing, count, width, transfer_prob, n_pump } => {
                Some(PumpSweep::comb(center, spacing, count, width, transfer_prob, n_pump))
            }
            _ => None,
        }
    }

    pub fn comb(&self) -> Option<CombSpec> {
        match *self {
            Step::Comb { delta, tooth_width, n_teeth, center_offset, background, tooth_shape } => {
                Some(CombSpec { delta, tooth_width, n_teeth, center_offset, background, tooth_shape })
            }
            _ => None,
        }
    }

    fn violations(&self, idx: usize, grid_step: Option<f64>, out: &mut Vec<String>) {
        let at = |m: String| format!("recipe[{idx}] ({}): {m}", self.op());
        match *self {
            Step::HyperfineInit { sweep_lo, sweep_hi, enhancement } => {
                if !(sweep_lo > 0.0 && sweep_lo < sweep_hi) {
                    out.push(at(format!("need 0 < sweep_lo < sweep_hi (got {sweep_lo}, {sweep_hi})")));
                }
                if !(enhancement >= 1.0) {
                    out.push(at(format!("enhancement must be >= 1 (got {enhancement})")));
                }
            }
            Step::PumpSweep { spacing, count, .. } => {
                let p = self.pump().expect("pump step");
                out.extend(p.violations().into_iter().map(at));
                if count == 0 {
                    out.push(at("count must be >= 1".into()));
                }
                if count > 1 && !(spacing > 0.0) {
                    out.push(at(format!("spacing must be > 0 (got {spacing})")));
                }
            }
            Step::Accumulate { pair_separation, pulse_width, n_pairs, transfer_prob_peak } => {
                let t = PulsePairTrain { pair_separation, pulse_width, n_pairs, transfer_prob_peak };
                out.extend(t.violations().into_iter().map(at));
                if let (Some(ts), Some(step)) = (pair_separation, grid_step) {
                    if ts > 0.0 && step > (1.0 / ts) / 10.0 * (1.0 + 1e-9) {
                        out.push(at(format!(
                            "comb period {} MHz is below the grid resolution: grid_step must be <= {} MHz",
                            1.0 / ts,
                            0.1 / ts
                        )));
                    }
                }
            }
            Step::Blur { kernel_fwhm, retained_fraction } => {
                out.extend(SuperhyperfineBlur { kernel_fwhm, retained_fraction }.violations().into_iter().map(at));
            }
            Step::Comb { .. } => {
                out.extend(self.comb().expect("comb step").violations().into_iter().map(at));
            }
            Step::Relax { elapsed_s, shelf_lifetime_s } => {
                if !(elapsed_s >= 0.0) {
                    out.push(at(format!("elapsed_s must be >= 0 (got {elapsed_s})")));
                }
                if !(shelf_lifetime_s > 0.0) {
                    out.push(at(format!("shelf_lifetime_s must be > 0 (got {shelf_lifetime_s})")));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputCfg {
    pub dt: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub t_start: f64,
    /// Intensity FWHM of each input pulse (ns).
    pub pulse_fwhm: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default)]
    pub carrier_mhz: f64,
    /// Comb period Δ (MHz) that sets the expected storage time.
    pub delta: f64,
}

impl InputCfg {
    pub fn trace(&self) -> TraceSpec {
        TraceSpec { t_start: self.t_start, dt: self.dt, n_samples: self.n_samples }
    }

    fn violations(&self, out: &mut Vec<String>) {
        out.extend(self.trace().violations().into_iter().map(|m| format!("input: {m}")));
        if !(self.pulse_fwhm > 0.0) {
            out.push(format!("input.pulse_fwhm must be > 0 (got {})", self.pulse_fwhm));
        }
        if !(self.delta > 0.0) {
            out.push(format!("input.delta must be > 0 (got {})", self.delta));
            return;
        }
        if self.dt > 0.0 && self.n_samples >= 2 {
            let storage = 1e3 / self.delta;
            let end = self.t_start + self.dt * self.n_samples as f64;
            let hw = (1.5 * self.pulse_fwhm).min(storage / 2.0);
            if self.center - hw < self.t_start || self.center + storage + hw > end {
                out.push(format!(
                    "input trace [{}, {end}] ns does not hold the input and its echo at {:.2} ns",
                    self.t_start,
                    self.center + storage
                ));
            }
            // Pulse bandwidth must sit well inside the Nyquist band.
            let pulse_bw = 0.441e3 / self.pulse_fwhm;
            if 4.0 * pulse_bw > 0.5e3 / self.dt {
                out.push(format!(
                    "input.dt {} ns leaves less than 4x Nyquist margin over the {pulse_bw:.1} MHz pulse bandwidth",
                    self.dt
                ));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodeCfg {
    pub n_modes: usize,
    /// ns between successive input pulses.
    pub mode_spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombPump {
    /// Tooth spacing Δ (MHz).
    pub delta: f64,
    /// Detuning δ of the comb center (MHz).
    #[serde(default)]
    pub detuning: f64,
    pub n_teeth: usize,
    pub width: f64,
    pub transfer_prob: f64,
    pub n_pump: u32,
}

impl CombPump {
    pub fn sweep(&self, detuning: f64) -> PumpSweep {
        PumpSweep::comb(detuning, self.delta, self.n_teeth, self.width, self.transfer_prob, self.n_pump)
    }

    fn violations(&self, name: &str, out: &mut Vec<String>) {
        if !(self.delta > 0.0) {
            out.push(format!("double_comb.{name}.delta must be > 0 (got {})", self.delta));
        }
        if self.n_teeth < 2 {
            out.push(format!("double_comb.{name}.n_teeth must be >= 2 (got {})", self.n_teeth));
        }
        out.extend(self.sweep(self.detuning).violations().into_iter().map(|m| format!("double_comb.{name}: {m}")));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleCombCfg {
    pub comb1: CombPump,
    pub comb2: CombPump,
    /// Early-late separation (ns); defaults to |1/Δ₁ − 1/Δ₂|.
    pub separation: Option<f64>,
    /// Mean photon number of the whole early+late input.
    #[serde(default = "default_mean_photons")]
    pub mean_photons: f64,
    /// Second-comb detunings swept for the fringe (MHz).
    #[serde(default)]
    pub det2_sweep: Vec<f64>,
}

fn default_mean_photons() -> f64 {
    0.6
}

impl DoubleCombCfg {
    pub fn separation(&self) -> f64 {
        self.separation
            .unwrap_or_else(|| afc_core::engine::DoubleCombSetup::matched_separation(self.comb1.delta, self.comb2.delta))
    }

    fn violations(&self, input: Option<&InputCfg>, out: &mut Vec<String>) {
        self.comb1.violations("comb1", out);
        self.comb2.violations("comb2", out);
        if !(self.mean_photons > 0.0) {
            out.push(format!("double_comb.mean_photons must be > 0 (got {})", self.mean_photons));
        }
        if self.comb1.delta > 0.0 && self.comb2.delta > 0.0 {
            let want = afc_core::engine::DoubleCombSetup::matched_separation(self.comb1.delta, self.comb2.delta);
            if let (Some(s), Some(inp)) = (self.separation, input) {
                if (s - want).abs() > inp.dt {
                    out.push(format!(
                        "double_comb.separation {s} ns does not match |1/Δ₁ − 1/Δ₂| = {want:.3} ns within one time step"
                    ));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorCfg {
    #[serde(default = "default_eta")]
    pub efficiency: f64,
    #[serde(default = "default_dark")]
    pub dark_rate: f64,
    pub window: f64,
    pub shots: u64,
}

fn default_eta() -> f64 {
    0.6
}

fn default_dark() -> f64 {
    18.5
}

impl DetectorCfg {
    pub fn model(&self, seed: u64) -> DetectorModel {
        DetectorModel { efficiency: self.efficiency, dark_rate: self.dark_rate, window: self.window, shots: self.shots, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityCfg {
    pub mu: f64,
    pub nu: f64,
    /// Detuning of comb 2 at which the analyzer is read out (MHz).
    #[serde(default)]
    pub det2: f64,
    /// Seeded Fock-resolved trials used to check the bound against the truth.
    #[serde(default)]
    pub soundness_trials: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessCfg {
    pub omega_c: f64,
    pub kappa_in: f64,
    pub kappa_i: f64,
    pub cooperativity: f64,
    pub line_fwhm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionFitCfg {
    /// Fine scan half-width and step around the line (MHz).
    pub fine_half_span: f64,
    pub fine_step: f64,
    /// Coarse scan over the cavity dip (MHz).
    pub wide_half_span: f64,
    pub wide_step: f64,
    /// Relative Gaussian noise on |r|².
    pub noise: f64,
    /// Enhancements whose spectra are synthesized and fitted.
    pub enhancements: Vec<f64>,
    pub sweep_lo: f64,
    pub sweep_hi: f64,
    pub guess: GuessCfg,
}

/// `[[expected]]` block checked by `run --check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub key: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug)]
pub enum LoadError {
    Io(String),
    Parse(String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadError::Io(m) => write!(f, "cannot read scenario: {m}"),
            LoadError::Parse(m) => write!(f, "parse error: {m}"),
            LoadError::Invalid(v) => {
                writeln!(f, "{} validation error(s):", v.len())?;
                for m in v {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for LoadError {}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, LoadError> {
        if text.trim().is_empty() {
            return Err(LoadError::Parse("scenario file is empty".into()));
        }
        let sc: Scenario = toml::from_str(text).map_err(|e| LoadError::Parse(e.to_string()))?;
        let v = sc.violations();
        if v.is_empty() {
            Ok(sc)
        } else {
            Err(LoadError::Invalid(v))
        }
    }

    /// Every violated invariant across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("name must not be empty".into());
        }
        let need = |present: bool, section: &str, out: &mut Vec<String>| {
            if !present {
                out.push(format!("kind {:?} requires a [{section}] section", self.kind));
            }
        };
        match self.kind {
            Kind::Projection => need(self.projection.is_some(), "projection", &mut out),
            Kind::ReflectionFit => {
                need(self.ensemble.is_some(), "ensemble", &mut out);
                need(self.cavity.is_some(), "cavity", &mut out);
                need(self.reflection_fit.is_some(), "reflection_fit", &mut out);
            }
            Kind::Storage | Kind::Multimode => {
                need(self.ensemble.is_some(), "ensemble", &mut out);
                need(self.cavity.is_some(), "cavity", &mut out);
                need(self.input.is_some(), "input", &mut out);
                if self.kind == Kind::Multimode {
                    need(self.multimode.is_some(), "multimode", &mut out);
                }
            }
            Kind::DoubleComb | Kind::Fidelity => {
                need(self.ensemble.is_some(), "ensemble", &mut out);
                need(self.cavity.is_some(), "cavity", &mut out);
                need(self.input.is_some(), "input", &mut out);
                need(self.double_comb.is_some(), "double_comb", &mut out);
                need(self.detector.is_some(), "detector", &mut out);
                if self.kind == Kind::Fidelity {
                    need(self.fidelity.is_some(), "fidelity", &mut out);
                }
            }
        }
        if let Some(e) = &self.ensemble {
            e.violations(&mut out);
        }
        if let Some(c) = &self.cavity {
            c.violations(&mut out);
        }
        let step = self.ensemble.as_ref().map(|e| e.grid_step);
        for (i, s) in self.recipe.iter().enumerate() {
            s.violations(i, step, &mut out);
        }
        if let Some(inp) = &self.input {
            inp.violations(&mut out);
        }
        if let (Some(m), Some(inp)) = (&self.multimode, &self.input) {
            if m.n_modes == 0 {
                out.push("multimode.n_modes must be >= 1".into());
            }
            if m.n_modes > 1 && !(m.mode_spacing > 0.0) {
                out.push(format!("multimode.mode_spacing must be > 0 (got {})", m.mode_spacing));
            }
            if inp.delta > 0.0 && m.n_modes > 1 && m.n_modes as f64 * m.mode_spacing >= 1e3 / inp.delta {
                out.push(format!(
                    "multimode train {} x {} ns is not shorter than the storage time {:.2} ns",
                    m.n_modes,
                    m.mode_spacing,
                    1e3 / inp.delta
                ));
            }
        }
        if let Some(d) = &self.double_comb {
            d.violations(self.input.as_ref(), &mut out);
            if self.kind == Kind::DoubleComb && d.det2_sweep.len() < 8 {
                out.push(format!("double_comb.det2_sweep needs >= 8 points (got {})", d.det2_sweep.len()));
            }
        }
        if let Some(d) = &self.detector {
            out.extend(d.model(self.seed).violations().into_iter().map(|m| format!("detector: {m}")));
        }
        if let Some(f) = &self.fidelity {
            if !(f.mu > f.nu && f.nu > 0.0) {
                out.push(format!("fidelity intensities need mu > nu > 0 (got {}, {})", f.mu, f.nu));
            }
        }
        if let Some(r) = &self.reflection_fit {
            if !(r.fine_step > 0.0 && r.wide_step > 0.0 && r.fine_half_span > 0.0 && r.wide_half_span > 0.0) {
                out.push("reflection_fit spans and steps must be > 0".into());
            }
            if !(r.noise >= 0.0) {
                out.push(format!("reflection_fit.noise must be >= 0 (got {})", r.noise));
            }
            if r.enhancements.is_empty() || r.enhancements.iter().any(|e| !(*e >= 1.0)) {
                out.push("reflection_fit.enhancements must be a non-empty list of values >= 1".into());
            }
            if let Some(e) = &self.ensemble {
                if e.grid_half_span < r.wide_half_span {
                    out.push(format!(
                        "ensemble.grid_half_span {} MHz must cover the wide scan half-span {} MHz",
                        e.grid_half_span, r.wide_half_span
                    ));
                }
            }
        }
        if let Some(p) = &self.projection {
            out.extend(p.violations().into_iter().map(|m| format!("projection: {m}")));
        }
        for e in &self.expected {
            if e.min.is_none() && e.max.is_none() {
                out.push(format!("expected '{}' needs min and/or max", e.key));
            }
        }
        out
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(|e| match e {
        LoadError::Parse(m) => LoadError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}
