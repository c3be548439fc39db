//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

use std::time::Instant;

use afc_core::cavity::{calibrate_tailored_coupling, CavityParams, HomogeneousParams};
use afc_core::detection::{simulate_counts, DetectorModel};
use afc_core::engine::{propagate, time_domain_oracle, transfer_function, Medium, TimeTrace, TraceSpec};
use afc_core::ensemble::{CombSpec, FrequencyGrid, LineShape, SpectralDensity, ToothShape};
use afc_core::fit::{fit_reflection, ReflectionModel};
use afcsim::presets::preset;
use afcsim::sweep::{parse_param, run_sweep};
use afcsim::{run, Scenario};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Summary = std::collections::BTreeMap<String, f64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, msg: String, notes: &mut Vec<String>, ok: &mut bool) {
    if !cond {
        *ok = false;
    }
    notes.push(format!("{}{msg}", if cond { "" } else { "!" }));
}

fn load(name: &str) -> Scenario {
    Scenario::from_toml(preset(name).unwrap()).unwrap()
}

fn summary(sc: &Scenario) -> Summary {
    run(sc).unwrap_or_else(|e| panic!("{}: {e:#}", sc.name)).summary
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn echo_timing() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let t = Instant::now();
    let s = summary(&load("fig2_storage"));
    let secs = t.elapsed().as_secs_f64();
    let (e1, e2) = (s["echo_time_ns"], s["second_echo_time_ns"]);
    check((e1 - 163.9).abs() <= 2.0, format!("echo {e1:.2} ns"), &mut n, &mut ok);
    check((e2 - 327.9).abs() <= 4.0, format!("second echo {e2:.2} ns"), &mut n, &mut ok);
    let (w1, w2) = (s["efficiency"], s["second_echo_efficiency"]);
    check(w2 < w1, format!("energies {w1:.3e} > {w2:.3e}"), &mut n, &mut ok);
    check(secs < 10.0, format!("{secs:.2} s"), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn impedance_matching() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let t = Instant::now();
    let sc = load("impedance_match");
    let grid = parse_param("cavity.tailored_cooperativity=0.5:2.0:61").unwrap();
    let table = run_sweep(&sc, &[grid], Some("efficiency")).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let best = table.argmax.map(|i| table.rows[i].values[0]).unwrap_or(f64::NAN);
    let eff = table.argmax.map(|i| table.rows[i].summary["efficiency"]).unwrap_or(f64::NAN);
    check((best - 1.0).abs() <= 0.05, format!("argmax C̃ = {best:.3} (η = {eff:.3})"), &mut n, &mut ok);
    check(secs < 60.0, format!("{secs:.1} s"), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn efficiency() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let a = summary(&load("fig2_storage"));
    let b = summary(&load("fig3_accumulated"));
    let (ea, eb, tb) = (a["efficiency"], b["efficiency"], b["echo_time_ns"]);
    check(within(ea, 7e-4, 6e-3), format!("fig2 η = {:.3}%", 100.0 * ea), &mut n, &mut ok);
    check(within(eb, 1e-6, 1e-4), format!("fig3 η = {eb:.2e}"), &mut n, &mut ok);
    check((tb / 1e3 - 10.0).abs() <= 0.1, format!("fig3 echo {:.3} μs", tb / 1e3), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn multimode() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let s = summary(&load("fig4a_multimode"));
    let resolved = s["resolved_echoes"];
    check(resolved == 10.0, format!("{resolved} resolved"), &mut n, &mut ok);
    let err = s["max_delay_error_ns"];
    check(err <= 50.0, format!("mean delay {:.3} μs, worst error {err:.2} ns", s["mean_delay_ns"] / 1e3), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn interference_phase(s: &Summary) -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let (m, p) = (s["fringe_minimum_mhz"], s["fringe_period_mhz"]);
    check((m - 1.70).abs() <= 0.05, format!("minimum at δ₂ = {m:.3} MHz"), &mut n, &mut ok);
    check((p / 3.4 - 1.0).abs() <= 0.02, format!("period {p:.3} MHz"), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn visibility(s: &Summary) -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let (d, lo) = (s["dark_baseline_counts"], s["min_counts_fit"]);
    check((d - 7.0).abs() <= 0.5, format!("dark {d:.2}"), &mut n, &mut ok);
    check(within(lo, 8.0, 16.0), format!("minimum {lo:.1} counts"), &mut n, &mut ok);
    let (r, u) = (s["visibility_raw"], s["visibility_subtracted"]);
    check(within(r, 0.85, 0.95), format!("raw V = {:.1}%", 100.0 * r), &mut n, &mut ok);
    check(within(u, 0.93, 1.0), format!("subtracted V = {:.1}%", 100.0 * u), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn fidelity() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let sc = load("fidelity_decoy");
    let s = summary(&sc);
    let f = s["f1_bound"];
    check(f >= 0.90, format!("default bound {f:.4} ± {:.4} (true {:.4})", s["f1_bound_err"], s["f1_true"]), &mut n, &mut ok);
    let (trials, bad) = (s["soundness_trials"], s["soundness_violations"]);
    check(trials >= 100.0 && bad == 0.0, format!("{bad}/{trials} trials above truth"), &mut n, &mut ok);

    let mut noisy = sc.clone();
    let det = noisy.detector.as_mut().unwrap();
    det.window = 472.5;
    det.shots = 800_000;
    let s = summary(&noisy);
    let f = s["f1_bound"];
    check(f > 2.0 / 3.0, format!("paper-like bound {f:.3} ± {:.3}", s["f1_bound_err"]), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn projection() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let s = summary(&load("projection_90"));
    let e = s["named_efficiency"];
    check(e >= 0.80, format!("named point η = {:.1}%", 100.0 * e), &mut n, &mut ok);
    check(s["monotone_in_intrinsic_q"] == 1.0, "monotone in Q_i".into(), &mut n, &mut ok);
    check(s["monotone_in_finesse"] == 1.0, "monotone in finesse".into(), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn medium() -> Medium {
    let grid = FrequencyGrid::symmetric(600.0, 0.05).unwrap();
    let line = SpectralDensity::init_inhomogeneous(150.0, 1.0, LineShape::Lorentzian, grid).unwrap();
    let spec = CombSpec { delta: 5.0, tooth_width: 1.0, n_teeth: 21, center_offset: 0.0, background: 0.0, tooth_shape: ToothShape::Gaussian };
    let density = line.comb_from_spec(&spec).unwrap();
    let homog = HomogeneousParams::from_t2_us(149.0).unwrap();
    let cav = CavityParams::from_loaded_q(194_816.0, 7000.0, 0.5).unwrap();
    let cavity = calibrate_tailored_coupling(&density, &cav, &homog, 0.0, 5.0, 1.0).unwrap();
    Medium { density, cavity, homog }
}

fn rel_l2(a: &TimeTrace, b: &TimeTrace) -> f64 {
    let num: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.samples.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn numerical_soundness() -> Outcome {
    let (mut ok, mut n) = (true, vec![]);
    let t = Instant::now();
    let m = medium();
    let sp = TraceSpec { t_start: -200.0, dt: 1.0, n_samples: 1024 };
    let r = transfer_function(&m, &sp.frequencies()).unwrap();
    let mut x = TimeTrace::zeros(sp).unwrap();
    x.add_gaussian(0.0, 20.0, Complex64::new(1.0, 0.0), 0.0);

    let oracle = rel_l2(&propagate(&x, &r).unwrap(), &time_domain_oracle(&x, &r).unwrap());
    check(oracle < 1e-6, format!("oracle {oracle:.1e}"), &mut n, &mut ok);

    let worst = r.iter().map(|v| v.norm()).fold(0.0, f64::max);
    check(worst <= 1.0 + 1e-12, format!("max |r| = {worst:.6}"), &mut n, &mut ok);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = TimeTrace {
        samples: (0..sp.n_samples).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        ..x.clone()
    };
    let (a, b) = (Complex64::new(0.4, -1.1), Complex64::new(-2.0, 0.3));
    let lhs = propagate(&x.axpy(a, &y, b).unwrap(), &r).unwrap();
    let rhs = propagate(&x, &r).unwrap().axpy(a, &propagate(&y, &r).unwrap(), b).unwrap();
    let lin = rel_l2(&lhs, &rhs);
    check(lin < 1e-10, format!("linearity {lin:.1e}"), &mut n, &mut ok);

    let empty = Medium { density: SpectralDensity::zeros(m.density.grid), cavity: CavityParams { kappa_i: 0.0, ..m.cavity }, ..m };
    let out = propagate(&x, &transfer_function(&empty, &sp.frequencies()).unwrap()).unwrap();
    let cons = ((out.energy() - x.energy()) / x.energy()).abs();
    check(cons < 1e-9, format!("conservation {cons:.1e}"), &mut n, &mut ok);

    let trials = 400;
    let mut total = 0.0;
    let mut mean = 0.0;
    for s in 0..trials {
        let model = DetectorModel { shots: 5000, window: 60.0, dark_rate: 1e5, seed: s, ..Default::default() };
        let rec = simulate_counts(&x, 0.02 / x.energy(), &model, &[(-30.0, 30.0)]).unwrap();
        total += rec.counts[0] as f64;
        mean = rec.expected_means[0];
    }
    let z = (total / trials as f64 - mean) / (mean / trials as f64).sqrt();
    check(z.abs() < 5.0, format!("Poisson z = {z:.2}"), &mut n, &mut ok);

    let gamma_h = 1.0 / (std::f64::consts::PI * 149.0);
    let truth = ReflectionModel { omega_c: 2000.0, kappa_in: 4174.6, kappa_i: 23_656.0, cooperativity: 0.3, line_fwhm: 150.0 };
    let mut f: Vec<f64> = (-300..=300).map(|k| k as f64 * 2.0).collect();
    f.extend((-120..=120).map(|k| k as f64 * 500.0).filter(|v| v.abs() > 600.0));
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<(f64, f64)> = f.iter().map(|&w| (w, truth.reflectance(gamma_h, w) * (1.0 + noise.sample(&mut rng)))).collect();
    let guess = ReflectionModel { omega_c: 2600.0, kappa_in: 4800.0, kappa_i: 21_000.0, cooperativity: 0.4, line_fwhm: 120.0 };
    let fit = fit_reflection(&data, guess, gamma_h).unwrap().params;
    let kappa = truth.kappa_in + truth.kappa_i;
    let rel = [
        (fit.omega_c - truth.omega_c) / kappa,
        (fit.kappa_in - truth.kappa_in) / truth.kappa_in,
        (fit.kappa_i - truth.kappa_i) / truth.kappa_i,
        (fit.cooperativity - truth.cooperativity) / truth.cooperativity,
        (fit.line_fwhm - truth.line_fwhm) / truth.line_fwhm,
    ]
    .iter()
    .fold(0.0f64, |a, v| a.max(v.abs()));
    check(rel < 0.05, format!("synthetic fit {:.1}%", 100.0 * rel), &mut n, &mut ok);

    let s = summary(&load("fig1c_fit"));
    let e1 = s["fit1.max_rel_error"];
    check(e1 < 0.05, format!("fig1c C=0.3 fit {:.1}%", 100.0 * e1), &mut n, &mut ok);
    let (c0, z0) = (s["fit0.cooperativity_rel_error"], s["fit0.max_pull"]);
    check(c0 < 0.05 && z0 < 3.0, format!("fig1c C=0.1 fit: C {:.1}%, max pull {z0:.2}σ", 100.0 * c0), &mut n, &mut ok);

    let secs = t.elapsed().as_secs_f64();
    check(secs < 300.0, format!("{secs:.1} s"), &mut n, &mut ok);
    Outcome { pass: ok, detail: n.join(", ") }
}

fn main() {
    let fig4b = summary(&load("fig4b_visibility"));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("echo timing", Box::new(echo_timing)),
        ("impedance matching", Box::new(impedance_matching)),
        ("efficiency", Box::new(efficiency)),
        ("multimode", Box::new(multimode)),
        ("interference phase", Box::new(|| interference_phase(&fig4b))),
        ("visibility with noise", Box::new(|| visibility(&fig4b))),
        ("fidelity bound", Box::new(fidelity)),
        ("projection", Box::new(projection)),
        ("numerical soundness", Box::new(numerical_soundness)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} AC{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
