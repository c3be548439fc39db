use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use afc_core::fit::{fit_reflection, ReflectionModel};
use afcsim::bundle::{atomic_write, write_bundle};
use afcsim::sweep::{parse_param, run_sweep};
use afcsim::{plots, presets, resolve_scenario, LoadError, Scenario};
use clap::{Parser, Subcommand};

const VALIDATION: u8 = 2;
const RUNTIME: u8 = 3;
const CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "afcsim", version, about = "AFC cavity storage simulator")]
struct Cli {
    /// Override the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's output_dir, else out/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or bundled preset and write a result bundle.
    Run {
        scenario: String,
        /// Compare the summary against the scenario's [[expected]] blocks.
        #[arg(long)]
        check: bool,
    },
    /// Cross-product sweep over scenario fields.
    Sweep {
        scenario: String,
        /// path=v1,v2,... or path=start:stop:n; repeat for more axes.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Summary key used to pick the best row.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Fit a measured reflection spectrum CSV.
    Fit {
        spectrum: PathBuf,
        /// omega_c,kappa_in,kappa_i,cooperativity,line_fwhm (MHz).
        #[arg(long, value_delimiter = ',')]
        guess: Option<Vec<f64>>,
        /// Homogeneous linewidth (MHz).
        #[arg(long, default_value_t = 1.0 / (std::f64::consts::PI * 149.0))]
        gamma_h: f64,
    },
    /// Render SVG figures from a result bundle.
    Plots { bundle: PathBuf },
    /// Load and validate scenarios without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// List bundled presets, or print one.
    Presets { name: Option<String> },
}

fn load(spec: &str, seed: Option<u64>) -> Result<Scenario, ExitCode> {
    match resolve_scenario(spec) {
        Ok(mut sc) => {
            if let Some(s) = seed {
                sc.seed = s;
            }
            Ok(sc)
        }
        Err(e) => {
            eprintln!("{spec}: {e}");
            Err(ExitCode::from(VALIDATION))
        }
    }
}

fn out_dir(cli_out: &Option<PathBuf>, sc: &Scenario) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| sc.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&sc.name))
}

fn cmd_run(cli: &Cli, spec: &str, check: bool) -> ExitCode {
    let sc = match load(spec, cli.seed) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let dir = out_dir(&cli.out, &sc);
    let t = Instant::now();
    let result = afcsim::run(&sc);
    let wall = t.elapsed().as_secs_f64();
    let manifest = match write_bundle(&dir, &sc, &result, wall) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("writing bundle: {e:#}");
            return ExitCode::from(RUNTIME);
        }
    };
    if let Err(e) = &result {
        eprintln!("{}: run failed: {e:#}", sc.name);
        return ExitCode::from(RUNTIME);
    }
    println!("{} ({:.2} s) -> {}", sc.name, wall, dir.display());
    for (k, v) in &manifest.summary {
        println!("  {k} = {v}");
    }
    if check {
        for c in &manifest.checks {
            let range = format!("[{}, {}]", c.min.map_or("-inf".into(), |v| v.to_string()), c.max.map_or("inf".into(), |v| v.to_string()));
            let val = c.value.map_or("missing".to_string(), |v| v.to_string());
            println!("  {} {} = {val} in {range}", if c.pass { "PASS" } else { "FAIL" }, c.key);
        }
        if !manifest.checks_pass() {
            return ExitCode::from(CHECK);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_sweep(cli: &Cli, spec: &str, params: &[String], metric: Option<&str>) -> ExitCode {
    let sc = match load(spec, cli.seed) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let grids = match params.iter().map(|p| parse_param(p)).collect::<anyhow::Result<Vec<_>>>() {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{e:#}");
            return ExitCode::from(VALIDATION);
        }
    };
    // Resolve all points before running anything.
    if let Err(e) = afcsim::sweep::expand(&sc, &grids) {
        eprintln!("sweep configuration: {e:#}");
        return ExitCode::from(VALIDATION);
    }
    let table = match run_sweep(&sc, &grids, metric) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("sweep failed: {e:#}");
            return ExitCode::from(RUNTIME);
        }
    };
    let dir = out_dir(&cli.out, &sc);
    let written = table
        .to_csv()
        .and_then(|csv| atomic_write(&dir.join("sweep.csv"), &csv))
        .and_then(|_| Ok(atomic_write(&dir.join("sweep.json"), &serde_json::to_vec_pretty(&table)?)?));
    if let Err(e) = written {
        eprintln!("writing sweep: {e:#}");
        return ExitCode::from(RUNTIME);
    }
    println!("{} rows -> {}", table.rows.len(), dir.join("sweep.csv").display());
    if let Some(i) = table.argmax {
        let r = &table.rows[i];
        println!("best {} = {} at {:?} = {:?}", table.metric, r.summary[&table.metric], table.params, r.values);
    }
    if table.rows.iter().any(|r| r.status != "ok") {
        eprintln!("some sweep points failed; see status column");
        return ExitCode::from(RUNTIME);
    }
    ExitCode::SUCCESS
}

fn cmd_fit(cli: &Cli, path: &Path, guess: Option<&[f64]>, gamma_h: f64) -> ExitCode {
    let data = match std::fs::File::open(path).map_err(afc_core::Error::from).and_then(afc_core::io::read_reflectance_csv) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(VALIDATION);
        }
    };
    let g = guess.unwrap_or(&[0.0, 4200.0, 23_600.0, 0.1, 150.0]);
    if g.len() != 5 {
        eprintln!("--guess needs 5 values (got {})", g.len());
        return ExitCode::from(VALIDATION);
    }
    let guess = ReflectionModel { omega_c: g[0], kappa_in: g[1], kappa_i: g[2], cooperativity: g[3], line_fwhm: g[4] };
    match fit_reflection(&data, guess, gamma_h) {
        Ok(fit) => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/fit"));
            let bytes = serde_json::to_vec_pretty(&fit).expect("fit serializes");
            if let Err(e) = atomic_write(&dir.join("fit.json"), &bytes) {
                eprintln!("writing fit: {e:#}");
                return ExitCode::from(RUNTIME);
            }
            println!("{}", String::from_utf8_lossy(&bytes));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fit failed: {e}");
            ExitCode::from(RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(RUNTIME);
        }
    }
    match &cli.cmd {
        Cmd::Run { scenario, check } => cmd_run(&cli, scenario, *check),
        Cmd::Sweep { scenario, params, metric } => cmd_sweep(&cli, scenario, params, metric.as_deref()),
        Cmd::Fit { spectrum, guess, gamma_h } => cmd_fit(&cli, spectrum, guess.as_deref(), *gamma_h),
        Cmd::Plots { bundle } => {
            let rep = plots::emit_plots(bundle);
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            for p in &rep.written {
                println!("{}", p.display());
            }
            println!("{} plot(s) written", rep.written.len());
            ExitCode::SUCCESS
        }
        Cmd::Validate { scenarios } => {
            let mut code = ExitCode::SUCCESS;
            for s in scenarios {
                match resolve_scenario(s) {
                    Ok(sc) => println!("{s}: ok ({}, {:?})", sc.name, sc.kind),
                    Err(e @ (LoadError::Io(_) | LoadError::Parse(_) | LoadError::Invalid(_))) => {
                        eprintln!("{s}: {e}");
                        code = ExitCode::from(VALIDATION);
                    }
                }
            }
            code
        }
        Cmd::Presets { name: None } => {
            for (n, _) in presets::PRESETS {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Presets { name: Some(n) } => match presets::preset(n) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("no preset named {n}");
                ExitCode::from(VALIDATION)
            }
        },
    }
}
