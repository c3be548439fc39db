use std::path::Path;
use std::process::{Command, Output};

use afcsim::bundle::read_manifest;

fn afcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcsim")).args(args).output().expect("spawn afcsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let e = e.ok()?;
            let name = e.file_name().into_string().ok()?;
            name.ends_with(".csv").then(|| (name, std::fs::read(e.path()).unwrap()))
        })
        .collect();
    v.sort();
    v
}

#[test]
fn run_with_check_succeeds_and_writes_a_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig2");
    let o = afcsim(&["--out", p(&out), "run", "fig2_storage", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.status, "ok");
    assert!(m.checks_pass());
    for e in &m.outputs {
        assert!(out.join(&e.name).is_file(), "{} missing", e.name);
    }
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().contains(".tmp-")));
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let o = afcsim(&["--seed", seed, "--out", p(dir), "--threads", "2", "run", "fig4b_visibility"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
    assert_eq!(read_manifest(&a).unwrap().results_hash, read_manifest(&b).unwrap().results_hash);
    assert_ne!(csv_files(&c), fa, "a different seed should change the counts");
}

#[test]
fn broken_config_is_a_validation_error_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = afcsim::presets::preset("fig2_storage").unwrap().replace("loaded_q = 7000.0", "loaded_q = 0.0");
    std::fs::write(&bad, text).unwrap();
    let out = tmp.path().join("never");
    let o = afcsim(&["--out", p(&out), "run", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("loaded_q"));
    assert!(!out.exists());

    std::fs::write(&bad, "").unwrap();
    assert_eq!(code(&afcsim(&["run", p(&bad)])), 2);
    assert_eq!(code(&afcsim(&["run", "no_such_preset_or_file"])), 2);
}

#[test]
fn validate_reports_each_file() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nkind = \"storage\"\n").unwrap();
    assert_eq!(code(&afcsim(&["validate", "fig2_storage", "fidelity_decoy"])), 0);
    let o = afcsim(&["validate", "fig2_storage", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("requires"));
}

#[test]
fn failed_expectation_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = tmp.path().join("strict.toml");
    let text = format!(
        "{}\n[[expected]]\nkey = \"efficiency\"\nmin = 0.5\n",
        afcsim::presets::preset("fig2_storage").unwrap()
    );
    std::fs::write(&sc, text).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&afcsim(&["--out", p(&out), "run", p(&sc)])), 0);
    let o = afcsim(&["--out", p(&out), "run", p(&sc), "--check"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL efficiency"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = afcsim(&["--out", p(&file.join("sub")), "run", "fig2_storage"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn empty_sweep_grid_gives_an_empty_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afcsim(&["--out", p(tmp.path()), "sweep", "fig2_storage", "--param", "cavity.loaded_q="]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
    assert!(csv.starts_with("cavity.loaded_q,status"));
}

#[test]
fn unresolvable_sweep_path_fails_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    for param in ["cavity.nope.x=1,2", "recipe.9.n_pump=1,2", "name=1,2", "cavity.loaded_q=1:2"] {
        let o = afcsim(&["--out", p(tmp.path()), "sweep", "fig2_storage", "--param", param]);
        assert_eq!(code(&o), 2, "{param}: {}", String::from_utf8_lossy(&o.stderr));
    }
    // An invalid point anywhere in the grid is caught up front too.
    let o = afcsim(&["--out", p(tmp.path()), "sweep", "fig2_storage", "--param", "cavity.loaded_q=7000,-1"]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("sweep.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afcsim(&[
        "--out",
        p(tmp.path()),
        "sweep",
        "fig2_storage",
        "--param",
        "recipe.1.n_pump=10,20",
        "--param",
        "cavity.thermal_cooperativity=0.05:0.1:2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.contains(",ok,")));
}

#[test]
fn plots_skip_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afcsim(&["plots", p(tmp.path())]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(!tmp.path().join("plots").exists());

    let out = tmp.path().join("b");
    assert_eq!(code(&afcsim(&["--out", p(&out), "run", "fig4b_visibility"])), 0);
    let o = afcsim(&["plots", p(&out)]);
    assert_eq!(code(&o), 0);
    for f in ["fringe.svg", "traces.svg", "comb_profile.svg"] {
        assert!(out.join("plots").join(f).is_file(), "{f}");
    }
}

#[test]
fn fit_subcommand_reads_a_bundle_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    assert_eq!(code(&afcsim(&["--out", p(&out), "run", "fig1c_fit"])), 0);
    let fit_out = tmp.path().join("fit");
    let o = afcsim(&[
        "--out",
        p(&fit_out),
        "fit",
        p(&out.join("spectrum_1.csv")),
        "--guess",
        "2600,4800,21000,0.4,120",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(fit_out.join("fit.json")).unwrap()).unwrap();
    let c = v["params"]["cooperativity"].as_f64().unwrap();
    assert!((c - 0.3).abs() < 0.03, "{c}");

    let missing = afcsim(&["fit", p(&tmp.path().join("nope.csv"))]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn presets_are_listed_and_printable() {
    let o = afcsim(&["presets"]);
    assert_eq!(code(&o), 0);
    let list = String::from_utf8_lossy(&o.stdout).to_string();
    for name in ["fig1c_fit", "fig2_storage", "fig3_accumulated", "fig4a_multimode", "fig4b_visibility", "fidelity_decoy", "projection_90"] {
        assert!(list.lines().any(|l| l == name), "{name}");
    }
    assert_eq!(code(&afcsim(&["presets", "nope"])), 2);
}
