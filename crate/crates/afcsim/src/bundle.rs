//! Result bundles: artifacts plus a manifest, written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::{RunOutput, Summary};
use crate::scenario::{Expectation, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub key: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub value: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub afcsim: String,
    pub afc_core: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub status: String,
    pub error: Option<String>,
    pub outputs: Vec<OutputEntry>,
    /// Hash over output hashes and the summary; stable across reruns.
    pub results_hash: String,
    pub summary: Summary,
    pub checks: Vec<CheckResult>,
}

impl Manifest {
    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scenario_hash(sc: &Scenario) -> String {
    sha256_hex(&serde_json::to_vec(sc).expect("scenario serializes"))
}

pub fn evaluate_checks(expected: &[Expectation], summary: &Summary) -> Vec<CheckResult> {
    expected
        .iter()
        .map(|e| {
            let value = summary.get(&e.key).copied();
            let pass = value.is_some_and(|v| {
                !v.is_nan() && e.min.is_none_or(|m| v >= m) && e.max.is_none_or(|m| v <= m)
            });
            CheckResult { key: e.key.clone(), min: e.min, max: e.max, value, pass }
        })
        .collect()
}

/// Write to a sibling temp file, then rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn results_hash(outputs: &[OutputEntry], summary: &Summary) -> String {
    let mut h = Sha256::new();
    for o in outputs {
        h.update(o.name.as_bytes());
        h.update(b"\0");
        h.update(o.sha256.as_bytes());
        h.update(b"\n");
    }
    h.update(serde_json::to_vec(summary).expect("summary serializes"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Persist a run (or its failure) under `dir` and return the manifest.
pub fn write_bundle(dir: &Path, sc: &Scenario, result: &Result<RunOutput>, wall_time_s: f64) -> Result<Manifest> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut outputs = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        atomic_write(&dir.join(name), bytes)?;
        outputs.push(OutputEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    };
    put("scenario.toml", toml::to_string(sc).context("serializing scenario")?.as_bytes())?;
    let (summary, status, error) = match result {
        Ok(run) => {
            for a in &run.artifacts {
                put(&a.name, &a.bytes)?;
            }
            let mut report = serde_json::to_vec_pretty(&run.report)?;
            report.push(b'\n');
            put("report.json", &report)?;
            (run.summary.clone(), "ok".to_string(), None)
        }
        Err(e) => (Summary::new(), "error".to_string(), Some(format!("{e:#}"))),
    };
    let checks = evaluate_checks(&sc.expected, &summary);
    let manifest = Manifest {
        name: sc.name.clone(),
        kind: serde_json::to_value(sc.kind)?.as_str().unwrap_or_default().to_string(),
        scenario_hash: scenario_hash(sc),
        seed: sc.seed,
        versions: Versions { afcsim: env!("CARGO_PKG_VERSION").into(), afc_core: afc_core::VERSION.into() },
        wall_time_s,
        status,
        error,
        results_hash: results_hash(&outputs, &summary),
        outputs,
        summary,
        checks,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    atomic_write(&dir.join("manifest.json"), &bytes)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p: PathBuf = dir.join("manifest.json");
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}
