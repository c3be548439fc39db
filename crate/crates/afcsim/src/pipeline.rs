//! Scenario kinds composed from the core modules.
//!
//! Every run returns a flat summary (`key -> number`, the thing `[[expected]]`
//! blocks and sweeps look at), a JSON report and a list of in-memory
//! artifacts. Nothing here touches the filesystem.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use afc_core::cavity::{
    calibrate_coupling, calibrate_tailored_coupling, cooperativity, reflection_spectrum, tailored_cooperativity,
    CavityParams, HomogeneousParams,
};
use afc_core::detection::{
    dark_subtracted_visibility, decoy_bound, combined_decoy_fidelity, confidence_lower, Z_ONE_SIDED_99, fidelity_four_states, fit_sinusoid, fock_decoy_trial,
    simulate_counts, visibility_fringe, BasisCounts, DecoyInput, DetectionRecord, FockChannel,
    FourStateRecords, SlotBins, TimeBinKind, TimeBinState,
};
use afc_core::engine::{
    project_efficiency, run_afc_storage, run_double_comb, run_multimode, DoubleCombResult, DoubleCombSetup, Medium,
    PulseSpec, StorageSetup, TimeTrace, TransferCache,
};
use afc_core::ensemble::{FrequencyGrid, PulsePairTrain, SpectralDensity, SuperhyperfineBlur};
use afc_core::fit::{fit_reflection, levenberg_marquardt, LmConfig, ReflectionModel};
use afc_core::io;
use anyhow::{anyhow, Context, Result};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{DoubleCombCfg, InputCfg, Kind, Scenario, Step};

pub type Summary = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub report: Value,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    fn new() -> Self {
        Self { summary: Summary::new(), report: json!({}), artifacts: Vec::new() }
    }

    fn put(&mut self, key: &str, v: f64) {
        self.summary.insert(key.to_string(), v);
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> afc_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("writing {name}"))?;
        self.artifacts.push(Artifact { name: name.to_string(), bytes: buf });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.artifacts.push(Artifact { name: name.to_string(), bytes });
        Ok(())
    }
}

/// Independent seed for sub-stream `stream` of the master seed.
pub fn sub_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn run(sc: &Scenario) -> Result<RunOutput> {
    let v = sc.violations();
    if !v.is_empty() {
        return Err(anyhow!("invalid scenario: {}", v.join("; ")));
    }
    match sc.kind {
        Kind::ReflectionFit => run_reflection_fit(sc),
        Kind::Storage => run_storage(sc),
        Kind::Multimode => run_multimode_kind(sc),
        Kind::DoubleComb => run_fringe(sc),
        Kind::Fidelity => run_fidelity(sc),
        Kind::Projection => run_projection(sc),
    }
}

/// Thermal line, cavity and the tailored density after the recipe.
struct Prepared {
    line: SpectralDensity,
    density: SpectralDensity,
    cavity: CavityParams,
    homog: HomogeneousParams,
}

fn prepare(sc: &Scenario, out: &mut RunOutput) -> Result<Prepared> {
    let e = sc.ensemble.as_ref().expect("validated");
    let c = sc.cavity.as_ref().expect("validated");
    // Grid must cover the trace bandwidth, or the transfer function is undefined.
    let mut half = e.grid_half_span;
    if let Some(inp) = &sc.input {
        half = half.max(inp.trace().nyquist_mhz() + e.grid_step);
    }
    let grid = FrequencyGrid::symmetric(half, e.grid_step)?;
    let homog = e.homogeneous()?;
    let line = SpectralDensity::init_inhomogeneous(e.line_fwhm, e.peak_density, e.line_shape, grid)?
        .with_reservoir(e.reservoir_ratio)?;
    let mut cav0 = CavityParams::from_loaded_q(c.f_optical_ghz, c.loaded_q, c.input_fraction)?;
    cav0.omega_c = c.omega_c;
    let mut cavity = calibrate_coupling(&line, &cav0, &homog, c.thermal_cooperativity)?;
    out.put("grid_half_span_mhz", half);
    out.put("cooperativity_thermal", cooperativity(&line, &cavity, &homog)?);
    out.put("kappa_mhz", cavity.kappa());

    let mut density = line.clone();
    for (i, step) in sc.recipe.iter().enumerate() {
        let ctx = || format!("recipe[{i}] ({})", step.op());
        density = match *step {
            Step::HyperfineInit { sweep_lo, sweep_hi, enhancement } => {
                let (d, rep) = density.apply_hyperfine_init(sweep_lo, sweep_hi, enhancement).with_context(ctx)?;
                out.put("init_enhancement", rep.achieved_enhancement);
                out.put("init_clamped", rep.clamped as u8 as f64);
                out.put("cooperativity_after_init", cooperativity(&d, &cavity, &homog)?);
                d
            }
            Step::PumpSweep { .. } => density.apply_pump_sweep(&step.pump().expect("pump")).with_context(ctx)?,
            Step::Accumulate { pair_separation, pulse_width, n_pairs, transfer_prob_peak } => density
                .accumulate_afc(&PulsePairTrain { pair_separation, pulse_width, n_pairs, transfer_prob_peak })
                .with_context(ctx)?,
            Step::Blur { kernel_fwhm, retained_fraction } => density
                .apply_superhyperfine_blur(&SuperhyperfineBlur { kernel_fwhm, retained_fraction })
                .with_context(ctx)?,
            Step::Comb { .. } => density.comb_from_spec(&step.comb().expect("comb")).with_context(ctx)?,
            Step::Relax { elapsed_s, shelf_lifetime_s } => density.relax(elapsed_s, shelf_lifetime_s).with_context(ctx)?,
        };
    }
    if let (Some(target), Some(inp)) = (c.tailored_cooperativity, &sc.input) {
        cavity = calibrate_tailored_coupling(&density, &cavity, &homog, 0.0, inp.delta, target)?;
    }
    Ok(Prepared { line, density, cavity, homog })
}

fn spectral_extent(inp: &InputCfg, p: &Prepared) -> (f64, f64) {
    let half = (20.0 * inp.delta).clamp(2.0, 60.0).min(-p.density.grid.start);
    let step = p.density.grid.step.min(inp.delta / 20.0);
    (half, step)
}

fn write_profile(out: &mut RunOutput, p: &Prepared, half: f64) -> Result<()> {
    out.csv("comb_profile.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["freq_MHz", "thermal", "active", "shelved"]).map_err(afc_core::Error::from)?;
        for i in 0..p.density.len() {
            let f = p.density.grid.freq(i);
            if f.abs() <= half {
                w.write_record(&[
                    f.to_string(),
                    p.line.active[i].to_string(),
                    p.density.active[i].to_string(),
                    p.density.shelved[i].to_string(),
                ])
                .map_err(afc_core::Error::from)?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn write_spectrum(out: &mut RunOutput, name: &str, p: &Prepared, half: f64, step: f64) -> Result<()> {
    let n = (half / step).floor() as i64;
    let freqs: Vec<f64> = (-n..=n).map(|k| k as f64 * step).collect();
    let r = reflection_spectrum(&p.density, &p.cavity, &p.homog, &freqs)?;
    out.csv(name, |buf| io::write_spectrum_csv(buf, &freqs, &r))
}

fn storage_setup(inp: &InputCfg) -> StorageSetup {
    StorageSetup {
        trace: inp.trace(),
        pulse: PulseSpec { fwhm: inp.pulse_fwhm, center: inp.center, carrier_mhz: inp.carrier_mhz },
        delta: inp.delta,
    }
}

fn run_storage(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let inp = sc.input.expect("validated");
    let p = prepare(sc, &mut out)?;
    out.put("tailored_cooperativity", tailored_cooperativity(&p.density, &p.cavity, &p.homog, 0.0, inp.delta)?);
    let cache = TransferCache::new(Medium { density: p.density.clone(), cavity: p.cavity, homog: p.homog });
    let res = run_afc_storage(&cache, &storage_setup(&inp))?;
    out.put("efficiency", res.efficiency);
    out.put("echo_time_ns", res.echo_time);
    for (k, v) in &res.diagnostics {
        out.put(k, *v);
    }
    let (half, step) = spectral_extent(&inp, &p);
    write_profile(&mut out, &p, half)?;
    write_spectrum(&mut out, "spectrum.csv", &p, half, step)?;
    out.csv("traces.csv", |buf| io::write_traces_csv(buf, &[("input", &res.input), ("output", &res.output)]))?;
    out.report = json!({
        "efficiency": res.efficiency,
        "echo_time_ns": res.echo_time,
        "window": res.window,
        "diagnostics": res.diagnostics,
        "markers_ns": [inp.center + 1e3 / inp.delta],
    });
    Ok(out)
}

fn run_multimode_kind(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let inp = sc.input.expect("validated");
    let mm = sc.multimode.expect("validated");
    let p = prepare(sc, &mut out)?;
    out.put("tailored_cooperativity", tailored_cooperativity(&p.density, &p.cavity, &p.homog, 0.0, inp.delta)?);
    let cache = TransferCache::new(Medium { density: p.density.clone(), cavity: p.cavity, homog: p.homog });
    let setup = storage_setup(&inp);
    let res = run_multimode(&cache, &setup, mm.n_modes, mm.mode_spacing)?;
    let storage = setup.storage_time();
    let delays: Vec<f64> = res.echo_times.iter().zip(&res.input_times).map(|(e, i)| e - i).collect();

    // An echo is resolved when its peak sits inside its window and the
    // intensity dips below half the smaller neighbour before the next one.
    let inten = res.storage.output.intensity();
    let at = |t: f64| inten[((t - res.storage.output.t_start) / res.storage.output.dt).round() as usize];
    let mut resolved = 0usize;
    for k in 0..res.echo_times.len() {
        let t = res.echo_times[k];
        if !t.is_finite() || (t - res.input_times[k] - storage).abs() >= mm.mode_spacing / 2.0 {
            continue;
        }
        let dips = |a: f64, b: f64| {
            let (i0, i1) = (
                ((a - res.storage.output.t_start) / res.storage.output.dt) as usize,
                ((b - res.storage.output.t_start) / res.storage.output.dt) as usize,
            );
            let lo = inten[i0..=i1].iter().cloned().fold(f64::INFINITY, f64::min);
            lo < 0.5 * at(a).min(at(b))
        };
        let left = k == 0 || !res.echo_times[k - 1].is_finite() || dips(res.echo_times[k - 1], t);
        let right = k + 1 == res.echo_times.len() || !res.echo_times[k + 1].is_finite() || dips(t, res.echo_times[k + 1]);
        if left && right {
            resolved += 1;
        }
    }
    out.put("efficiency", res.storage.efficiency);
    out.put("n_modes", mm.n_modes as f64);
    out.put("resolved_echoes", resolved as f64);
    out.put("storage_time_ns", storage);
    out.put("mean_delay_ns", delays.iter().sum::<f64>() / delays.len() as f64);
    out.put(
        "max_delay_error_ns",
        delays.iter().map(|d| if d.is_finite() { (d - storage).abs() } else { f64::INFINITY }).fold(0.0, f64::max),
    );
    out.put("min_mode_efficiency", res.mode_efficiencies.iter().cloned().fold(f64::INFINITY, f64::min));
    for (k, v) in &res.storage.diagnostics {
        out.put(k, *v);
    }
    let (half, step) = spectral_extent(&inp, &p);
    write_profile(&mut out, &p, half)?;
    write_spectrum(&mut out, "spectrum.csv", &p, half, step)?;
    out.csv("traces.csv", |buf| {
        io::write_traces_csv(buf, &[("input", &res.storage.input), ("output", &res.storage.output)])
    })?;
    out.report = json!({
        "input_times_ns": res.input_times,
        "echo_times_ns": res.echo_times,
        "delays_ns": delays,
        "mode_efficiencies": res.mode_efficiencies,
        "markers_ns": res.input_times.iter().map(|t| t + storage).collect::<Vec<_>>(),
    });
    Ok(out)
}

fn run_reflection_fit(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let rf = sc.reflection_fit.as_ref().expect("validated");
    let p = prepare(sc, &mut out)?;
    let freqs = {
        let nf = (rf.fine_half_span / rf.fine_step).floor() as i64;
        let nw = (rf.wide_half_span / rf.wide_step).floor() as i64;
        let mut f: Vec<f64> = (-nf..=nf).map(|k| k as f64 * rf.fine_step).collect();
        f.extend((-nw..=nw).map(|k| k as f64 * rf.wide_step).filter(|x| x.abs() > rf.fine_half_span));
        f.sort_by(f64::total_cmp);
        f
    };
    let gamma_h = p.homog.gamma_h;
    let kappa = p.cavity.kappa();
    let mut fits = Vec::new();
    for (i, &enh) in rf.enhancements.iter().enumerate() {
        let d = if enh > 1.0 { p.line.apply_hyperfine_init(rf.sweep_lo, rf.sweep_hi, enh)?.0 } else { p.line.clone() };
        let c_true = cooperativity(&d, &p.cavity, &p.homog)?;
        let r = reflection_spectrum(&d, &p.cavity, &p.homog, &freqs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(sc.seed, i as u64));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let measured: Vec<(f64, f64)> =
            freqs.iter().zip(&r).map(|(&f, v)| (f, v.norm_sqr() * (1.0 + rf.noise * normal.sample(&mut rng)))).collect();
        let g = rf.guess;
        let guess = ReflectionModel {
            omega_c: g.omega_c,
            kappa_in: g.kappa_in,
            kappa_i: g.kappa_i,
            cooperativity: g.cooperativity,
            line_fwhm: g.line_fwhm,
        };
        let fit = fit_reflection(&measured, guess, gamma_h).with_context(|| format!("fitting spectrum {i}"))?;
        let truth = ReflectionModel {
            omega_c: p.cavity.omega_c,
            kappa_in: p.cavity.kappa_in,
            kappa_i: p.cavity.kappa_i,
            cooperativity: c_true,
            line_fwhm: sc.ensemble.as_ref().expect("validated").line_fwhm,
        };
        let se = fit.std_errors;
        let pulls = [
            (fit.params.omega_c - truth.omega_c) / se.omega_c,
            (fit.params.kappa_in - truth.kappa_in) / se.kappa_in,
            (fit.params.kappa_i - truth.kappa_i) / se.kappa_i,
            (fit.params.cooperativity - truth.cooperativity) / se.cooperativity,
            (fit.params.line_fwhm - truth.line_fwhm) / se.line_fwhm,
        ];
        let max_pull = pulls.iter().map(|z| z.abs()).fold(0.0, f64::max);
        let pairs = [
            (fit.params.omega_c, truth.omega_c, kappa),
            (fit.params.kappa_in, truth.kappa_in, truth.kappa_in),
            (fit.params.kappa_i, truth.kappa_i, truth.kappa_i.max(1e-9 * kappa)),
            (fit.params.cooperativity, truth.cooperativity, truth.cooperativity),
            (fit.params.line_fwhm, truth.line_fwhm, truth.line_fwhm),
        ];
        // ω_c is compared on the scale of κ; the others relative to themselves.
        let max_rel = pairs.iter().map(|(g, t, s)| ((g - t) / s).abs()).fold(0.0, f64::max);
        out.put(&format!("fit{i}.cooperativity"), fit.params.cooperativity);
        out.put(&format!("fit{i}.cooperativity_err"), fit.std_errors.cooperativity);
        out.put(&format!("fit{i}.cooperativity_true"), c_true);
        out.put(&format!("fit{i}.max_rel_error"), max_rel);
        out.put(&format!("fit{i}.max_pull"), max_pull);
        out.put(&format!("fit{i}.cooperativity_rel_error"), ((fit.params.cooperativity - c_true) / c_true).abs());
        let name = format!("spectrum_{i}.csv");
        out.csv(&name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["freq_GHz_detuning", "abs_r_sq", "model_abs_r_sq", "fit_abs_r_sq"])?;
            for ((f, y), v) in measured.iter().zip(&r) {
                w.write_record(&[
                    (f / 1e3).to_string(),
                    y.to_string(),
                    v.norm_sqr().to_string(),
                    fit.params.reflectance(gamma_h, *f).to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        fits.push(json!({ "enhancement": enh, "truth": truth, "fit": fit.params, "std_errors": fit.std_errors,
                          "residual_norm": fit.residual_norm, "iterations": fit.iterations }));
    }
    if rf.enhancements.len() >= 2 {
        let a = out.summary["fit0.cooperativity"];
        let b = out.summary["fit1.cooperativity"];
        out.put("cooperativity_ratio", b / a);
        let se = out.summary["fit0.cooperativity_err"].hypot(out.summary["fit1.cooperativity_err"]);
        out.put("cooperativity_separation_sigma", (b - a) / se);
    }
    out.report = json!({ "fits": fits });
    Ok(out)
}

/// Both combs burned on the prepared density, second comb at `det2`.
fn double_comb_medium(base: &Prepared, dc: &DoubleCombCfg, det2: f64) -> Result<TransferCache> {
    let d = base
        .density
        .apply_pump_sweep(&dc.comb1.sweep(dc.comb1.detuning))?
        .apply_pump_sweep(&dc.comb2.sweep(det2))?;
    Ok(TransferCache::new(Medium { density: d, cavity: base.cavity, homog: base.homog }))
}

fn double_setup(inp: &InputCfg, dc: &DoubleCombCfg, early: f64, late: f64) -> DoubleCombSetup {
    DoubleCombSetup {
        trace: inp.trace(),
        pulse: PulseSpec { fwhm: inp.pulse_fwhm, center: inp.center, carrier_mhz: inp.carrier_mhz },
        delta1: dc.comb1.delta,
        delta2: dc.comb2.delta,
        early_amp: Complex64::new(early, 0.0),
        late_amp: Complex64::new(late, 0.0),
        separation: dc.separation(),
    }
}

fn bins_of(setup: &DoubleCombSetup) -> Vec<(f64, f64)> {
    setup.slot_windows().iter().map(|w| (w.start, w.end)).collect()
}

/// Free-period fit of `a + b·cos(2πx/P + φ)`; returns (period, minimum, residual).
pub fn free_period_fit(xs: &[f64], ys: &[f64], starts: &[f64]) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    let scale_y = ys.iter().cloned().fold(0.0, |a: f64, y| a.max(y.abs())).max(1e-300);
    for &p0 in starts {
        // Linear solve at fixed period for a starting point.
        let k = 2.0 * PI / p0;
        let a = nalgebra::DMatrix::from_fn(xs.len(), 3, |i, j| match j {
            0 => 1.0,
            1 => (k * xs[i]).cos(),
            _ => (k * xs[i]).sin(),
        });
        let y = DVector::from_column_slice(ys);
        let Ok(sol) = a.clone().svd(true, true).solve(&y, 1e-12) else { continue };
        let amp = sol[1].hypot(sol[2]);
        let phase = (-sol[2]).atan2(sol[1]);
        let res = |p: &[f64]| {
            DVector::from_iterator(
                xs.len(),
                xs.iter().zip(ys).map(|(x, y)| (p[0] + p[1] * (2.0 * PI * x / p[2] + p[3]).cos() - y) / scale_y),
            )
        };
        let lm = levenberg_marquardt(
            res,
            &[sol[0], amp, p0, phase],
            &[f64::NEG_INFINITY, 0.0, 1e-6, f64::NEG_INFINITY],
            &[f64::INFINITY; 4],
            &[scale_y, scale_y, p0, 1.0],
            LmConfig::default(),
        );
        if !lm.converged {
            continue;
        }
        let (period, phase) = (lm.params[2], lm.params[3]);
        let min = ((PI - phase) * period / (2.0 * PI)).rem_euclid(period);
        if best.is_none_or(|b| lm.residual_norm < b.2) {
            best = Some((period, min, lm.residual_norm));
        }
    }
    best
}

fn run_fringe(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let inp = sc.input.expect("validated");
    let dc = sc.double_comb.clone().expect("validated");
    let det = sc.detector.expect("validated");
    let base = prepare(sc, &mut out)?;
    let setup = double_setup(&inp, &dc, FRAC_1_SQRT_2, FRAC_1_SQRT_2);
    let bins = bins_of(&setup);

    let points: Vec<(f64, DoubleCombResult, DetectionRecord)> = dc
        .det2_sweep
        .par_iter()
        .enumerate()
        .map(|(k, &d2)| {
            let cache = double_comb_medium(&base, &dc, d2)?;
            let res = run_double_comb(&cache, &setup)?;
            let model = det.model(sub_seed(sc.seed, k as u64));
            let rec = simulate_counts(&res.output, dc.mean_photons / res.input.energy(), &model, &bins)?;
            Ok((d2, res, rec))
        })
        .collect::<Result<_>>()?;

    let period = dc.comb2.delta;
    let sweep: Vec<(f64, DetectionRecord)> = points.iter().map(|(d, _, r)| (*d, r.clone())).collect();
    let table = visibility_fringe(&sweep, 1, period)?;
    let raw = fit_sinusoid(&table)?;
    let model = det.model(sc.seed);
    let baseline = model.dark_mean();
    let sub = dark_subtracted_visibility(&table, baseline)?;

    // Noise-free fringe over two nominal periods from the sweep start: the
    // period and minimum come from a free-period fit, which a half-period
    // scan cannot pin down once the fringe is not exactly sinusoidal.
    let lo = dc.det2_sweep.iter().cloned().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = (0..=40).map(|k| lo + 2.0 * period * k as f64 / 40.0).collect();
    let ys: Vec<f64> = xs
        .par_iter()
        .map(|&d2| Ok(run_double_comb(&double_comb_medium(&base, &dc, d2)?, &setup)?.overlap_energy))
        .collect::<Result<_>>()?;
    let starts: Vec<f64> = (0..9).map(|k| period * (0.6 + 0.1 * k as f64)).collect();
    let (fit_period, fit_min, _) =
        free_period_fit(&xs, &ys, &starts).ok_or_else(|| anyhow!("noise-free fringe fit did not converge"))?;

    let burned = double_comb_medium(&base, &dc, lo)?.medium().density.clone();
    let shown = Prepared { density: burned, line: base.line.clone(), ..base };
    let (half, _) = spectral_extent(&inp, &shown);
    write_profile(&mut out, &shown, half)?;

    out.put("fringe_period_mhz", fit_period);
    out.put("fringe_minimum_mhz", fit_min);
    out.put("visibility_raw", raw.visibility);
    out.put("visibility_raw_err", raw.visibility_err);
    out.put("visibility_subtracted", sub.visibility);
    out.put("visibility_subtracted_err", sub.visibility_err);
    out.put("dark_baseline_counts", baseline);
    out.put("min_counts_fit", raw.offset - raw.amplitude);
    out.put("max_counts_fit", raw.offset + raw.amplitude);
    out.put("n_points", points.len() as f64);
    let expected: Vec<f64> = points.iter().map(|p| p.2.expected_means[1]).collect();
    let (emin, emax) = expected.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    out.put("visibility_expected_extrema", (emax - emin) / (emax + emin));
    let mut ideal = table.clone();
    for (pt, m) in ideal.points.iter_mut().zip(&expected) {
        pt.counts = *m;
        pt.error = m.sqrt();
    }
    out.put("visibility_expected_fit", fit_sinusoid(&ideal)?.visibility);
    out.put("visibility_expected_subtracted", dark_subtracted_visibility(&ideal, baseline)?.visibility);
    out.put("predicted_visibility", points.iter().map(|p| p.1.predicted_visibility).fold(0.0, f64::max));

    out.csv("fringe.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["det2_MHz", "counts", "error", "expected_mean", "overlap_energy", "fit_raw"])?;
        for ((pt, (_, res, rec)), _) in table.points.iter().zip(&points).zip(0..) {
            let x = 2.0 * PI * pt.detuning / period;
            let model = raw.offset + raw.amplitude * (x + raw.phase).cos();
            w.write_record(&[
                pt.detuning.to_string(),
                pt.counts.to_string(),
                pt.error.to_string(),
                rec.expected_means[1].to_string(),
                res.overlap_energy.to_string(),
                model.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    if let Some((_, res, rec)) = points.iter().find(|p| p.0 == 0.0).or(points.first()) {
        out.csv("traces.csv", |buf| io::write_traces_csv(buf, &[("input", &res.input), ("output", &res.output)]))?;
        out.csv("record.csv", |buf| io::write_record_csv(buf, rec))?;
        out.json("record.json", &io::RecordMeta::of(rec))?;
    }
    out.report = json!({
        "period_mhz": period,
        "sinusoid_raw": raw,
        "sinusoid_dark_subtracted": sub,
        "free_period_fit": { "period_mhz": fit_period, "minimum_mhz": fit_min },
        "markers_ns": setup.slot_times(),
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct IntensityRun {
    mu: f64,
    records: FourStateRecords,
    vacuum: DetectionRecord,
}

fn basis_inputs(signal: &IntensityRun, decoy: &IntensityRun, b: SlotBins, shots: f64) -> (DecoyInput, DecoyInput) {
    let n = |r: &DetectionRecord, i: usize| r.counts[i] as f64;
    let z = |run: &IntensityRun| BasisCounts {
        correct: n(&run.records.early, b.early) + n(&run.records.late, b.late),
        wrong: n(&run.records.early, b.late) + n(&run.records.late, b.early),
        shots: 2.0 * shots,
    };
    let x = |run: &IntensityRun| BasisCounts {
        correct: n(&run.records.plus, b.overlap),
        wrong: n(&run.records.minus, b.overlap),
        shots,
    };
    // Y₀ counts both outcome bins of one preparation; the X pair is one bin read twice.
    let zi = DecoyInput {
        mu: signal.mu,
        nu: decoy.mu,
        signal: z(signal),
        decoy: z(decoy),
        dark_counts: n(&signal.vacuum, b.early) + n(&signal.vacuum, b.late),
        dark_shots: shots,
    };
    let xi = DecoyInput {
        mu: signal.mu,
        nu: decoy.mu,
        signal: x(signal),
        decoy: x(decoy),
        dark_counts: n(&signal.vacuum, b.overlap),
        dark_shots: shots / 2.0,
    };
    (zi, xi)
}

fn run_fidelity(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let inp = sc.input.expect("validated");
    let dc = sc.double_comb.clone().expect("validated");
    let det = sc.detector.expect("validated");
    let fc = sc.fidelity.expect("validated");
    let base = prepare(sc, &mut out)?;
    let cache = double_comb_medium(&base, &dc, fc.det2)?;
    let kinds = [TimeBinKind::Early, TimeBinKind::Late, TimeBinKind::Plus, TimeBinKind::Minus];

    // Unit-amplitude single-pulse energy, to turn slot energies into per-photon probabilities.
    let mut one = TimeTrace::zeros(inp.trace())?;
    one.add_gaussian(inp.center, inp.pulse_fwhm, Complex64::new(1.0, 0.0), inp.carrier_mhz);
    let unit = one.energy();

    let mut engine = Vec::new();
    for kind in kinds {
        let (e, l) = TimeBinState::new(kind, 1.0)?.amplitudes();
        let setup = double_setup(&inp, &dc, e, l);
        engine.push((setup, run_double_comb(&cache, &setup)?));
    }
    let bins = bins_of(&engine[0].0);
    let slots = SlotBins { early: 0, late: 2, overlap: 1 };

    let run_at = |mu: f64, tag: u64| -> Result<IntensityRun> {
        let rec = |k: usize| -> Result<DetectionRecord> {
            let res = &engine[k].1;
            let model = det.model(sub_seed(sc.seed, tag * 8 + k as u64));
            Ok(simulate_counts(&res.output, mu / res.input.energy(), &model, &bins)?)
        };
        let vac = simulate_counts(&engine[0].1.output, 0.0, &det.model(sub_seed(sc.seed, tag * 8 + 4)), &bins)?;
        Ok(IntensityRun {
            mu,
            records: FourStateRecords { early: rec(0)?, late: rec(1)?, plus: rec(2)?, minus: rec(3)? },
            vacuum: vac,
        })
    };
    let signal = run_at(fc.mu, 0)?;
    let decoy = run_at(fc.nu, 1)?;
    let direct = fidelity_four_states(&signal.records, slots)?;
    let shots = det.shots as f64;
    let (zi, xi) = basis_inputs(&signal, &decoy, slots, shots);
    let zb = decoy_bound(&zi)?;
    let xb = decoy_bound(&xi)?;
    let (f1, f1_err) = combined_decoy_fidelity(&zb, &xb);

    // Fock-resolved oracle channels built from the same engine energies.
    let eta = det.efficiency;
    let prob = |k: usize, slot: usize| eta * engine[k].1.slot_energies[slot] * unit / engine[k].1.input.energy();
    let dark = det.model(0).dark_per_shot();
    let zch = FockChannel { p_correct: 0.5 * (prob(0, 0) + prob(1, 2)), p_wrong: 0.5 * (prob(0, 2) + prob(1, 0)), dark };
    let xch = FockChannel { p_correct: prob(2, 1), p_wrong: prob(3, 1), dark };
    zch.validate()?;
    xch.validate()?;
    let true_z = zch.single_photon_fidelity();
    let true_x = xch.single_photon_fidelity();
    let true_f1 = (true_z + 2.0 * true_x) / 3.0;

    let trials: Vec<(f64, f64, f64, f64)> = (0..fc.soundness_trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = sub_seed(sc.seed, 1_000 + t);
            let zt = decoy_bound(&fock_decoy_trial(&zch, fc.mu, fc.nu, 2 * det.shots, s))?;
            let xt = decoy_bound(&fock_decoy_trial(&xch, fc.mu, fc.nu, det.shots, s ^ 0x5851_f42d_4c95_7f2d))?;
            let (f, e) = combined_decoy_fidelity(&zt, &xt);
            Ok((zt.fidelity, xt.fidelity, f, confidence_lower(f, e, Z_ONE_SIDED_99)))
        })
        .collect::<afc_core::Result<_>>()?;
    let violations = trials
        .iter()
        .filter(|(z, x, f, _)| *z > true_z || *x > true_x || *f > true_f1)
        .count();
    let violations_99 = trials.iter().filter(|t| t.3 > true_f1).count();

    out.put("f_z", direct.f_z);
    out.put("f_x", direct.f_x);
    out.put("f_mean", direct.f_mean);
    out.put("f_mean_err", direct.f_mean_err);
    out.put("f1_bound", f1);
    out.put("f1_bound_err", f1_err);
    out.put("f1_bound_lower99", confidence_lower(f1, f1_err, Z_ONE_SIDED_99));
    out.put("f1_bound_z", zb.fidelity);
    out.put("f1_bound_x", xb.fidelity);
    out.put("y1_lower_z", zb.y1_lower);
    out.put("y1_lower_x", xb.y1_lower);
    out.put("bound_inconsistent", (zb.inconsistent || xb.inconsistent) as u8 as f64);
    out.put("bound_classical", (f1 <= 2.0 / 3.0) as u8 as f64);
    out.put("f1_true", true_f1);
    out.put("soundness_trials", trials.len() as f64);
    out.put("soundness_violations", violations as f64);
    out.put("soundness_violations_lower99", violations_99 as f64);
    if !trials.is_empty() {
        out.put("trial_bound_mean", trials.iter().map(|t| t.2).sum::<f64>() / trials.len() as f64);
        out.put("trial_bound_max", trials.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max));
    }
    for (name, run) in [("signal", &signal), ("decoy", &decoy)] {
        for (state, rec) in [
            ("early", &run.records.early),
            ("late", &run.records.late),
            ("plus", &run.records.plus),
            ("minus", &run.records.minus),
        ] {
            out.csv(&format!("record_{name}_{state}.csv"), |buf| io::write_record_csv(buf, rec))?;
        }
    }
    out.csv("record_vacuum.csv", |buf| io::write_record_csv(buf, &signal.vacuum))?;
    out.json("record.json", &io::RecordMeta::of(&signal.vacuum))?;
    out.report = json!({
        "four_state": direct,
        "decoy_z": { "input": zi, "bound": zb },
        "decoy_x": { "input": xi, "bound": xb },
        "f1_bound": f1,
        "f1_bound_err": f1_err,
        "oracle": { "z": zch, "x": xch, "true_f1": true_f1, "true_z": true_z, "true_x": true_x },
        "soundness": { "trials": trials.len(), "violations": violations, "violations_lower99": violations_99 },
    });
    Ok(out)
}

/// True when `eff` never decreases along `axis` with the other parameters fixed.
fn monotone(points: &[afc_core::engine::ProjectionPoint], axis: impl Fn(&afc_core::engine::ProjectionPoint) -> (f64, [u64; 3])) -> bool {
    let mut groups: BTreeMap<[u64; 3], Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        let (x, key) = axis(p);
        groups.entry(key).or_default().push((x, p.efficiency));
    }
    groups.values_mut().all(|g| {
        g.sort_by(|a, b| a.0.total_cmp(&b.0));
        g.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12)
    })
}

fn run_projection(sc: &Scenario) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let cfg = sc.projection.as_ref().expect("validated");
    let table = project_efficiency(cfg)?;
    let pts = &table.points;
    let by_q = monotone(pts, |p| {
        let q = p.params;
        (q.intrinsic_q, [q.doping_scale.to_bits(), q.enhancement.to_bits(), q.finesse.to_bits()])
    });
    let by_f = monotone(pts, |p| {
        let q = p.params;
        (q.finesse, [q.doping_scale.to_bits(), q.enhancement.to_bits(), q.intrinsic_q.to_bits()])
    });
    out.put("n_points", pts.len() as f64);
    out.put("monotone_in_intrinsic_q", by_q as u8 as f64);
    out.put("monotone_in_finesse", by_f as u8 as f64);
    if let Some(i) = table.argmax {
        out.put("max_efficiency", pts[i].efficiency);
    }
    if let Some(n) = table.named {
        out.put("named_efficiency", n.efficiency);
        out.put("named_tailored_cooperativity", n.tailored_cooperativity);
    }
    out.csv("projection.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "doping_scale",
            "enhancement",
            "intrinsic_q",
            "finesse",
            "tailored_cooperativity",
            "kappa_in",
            "kappa_i",
            "efficiency",
        ])?;
        for p in pts {
            let q = p.params;
            w.write_record(
                [q.doping_scale, q.enhancement, q.intrinsic_q, q.finesse, p.tailored_cooperativity, p.kappa_in, p.kappa_i, p.efficiency]
                    .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.report = serde_json::to_value(&table)?;
    Ok(out)
}

/// Helper for sweeps: the summary value used as the sweep's figure of merit.
pub fn headline(kind: Kind) -> &'static str {
    match kind {
        Kind::ReflectionFit => "cooperativity_ratio",
        Kind::Storage | Kind::Multimode => "efficiency",
        Kind::DoubleComb => "visibility_raw",
        Kind::Fidelity => "f1_bound",
        Kind::Projection => "named_efficiency",
    }
}
