//! Cross-product parameter sweeps over scenario fields.
//!
//! Paths address the TOML document (`cavity.loaded_q`, `recipe.1.n_pump`).
//! Every grid point is resolved and validated before anything runs.

use std::collections::BTreeSet;

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use serde::Serialize;
use toml::Value;

use crate::pipeline::{self, headline, Summary};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub path: String,
    pub values: Vec<f64>,
}

/// `path=v1,v2,...` or `path=start:stop:n` (inclusive, n points).
pub fn parse_param(spec: &str) -> Result<ParamGrid> {
    let (path, grid) = spec.split_once('=').ok_or_else(|| anyhow!("parameter '{spec}' is not of the form path=values"))?;
    let path = path.trim();
    if path.is_empty() {
        bail!("parameter '{spec}' has an empty path");
    }
    let grid = grid.trim();
    let values = if grid.is_empty() {
        Vec::new()
    } else if grid.contains(':') {
        let parts: Vec<&str> = grid.split(':').collect();
        if parts.len() != 3 {
            bail!("range '{grid}' must be start:stop:n");
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| anyhow!("bad range start '{}'", parts[0]))?;
        let b: f64 = parts[1].trim().parse().map_err(|_| anyhow!("bad range stop '{}'", parts[1]))?;
        let n: usize = parts[2].trim().parse().map_err(|_| anyhow!("bad point count '{}'", parts[2]))?;
        match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
        }
    } else {
        grid.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| anyhow!("bad value '{s}' for {path}")))
            .collect::<Result<_>>()?
    };
    Ok(ParamGrid { path: path.to_string(), values })
}

fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::Integer(v as i64)
    } else {
        Value::Float(v)
    }
}

/// Set `path` in `doc`. The parent must exist; the leaf may be new.
pub fn set_path(doc: &mut Value, path: &str, v: f64) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = doc;
    for (i, key) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Table(t) => {
                if last {
                    if let Some(old) = t.get(*key) {
                        if !matches!(old, Value::Integer(_) | Value::Float(_)) {
                            bail!("path '{path}' does not address a number");
                        }
                    }
                    // Keep floats as floats so an f64 field never sees a type change.
                    let new = match t.get(*key) {
                        Some(Value::Float(_)) => Value::Float(v),
                        _ => number(v),
                    };
                    t.insert(key.to_string(), new);
                    return Ok(());
                }
                t.get_mut(*key).ok_or_else(|| anyhow!("path '{path}': no section '{key}'"))?
            }
            Value::Array(a) => {
                let idx: usize = key.parse().map_err(|_| anyhow!("path '{path}': '{key}' is not an index"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| anyhow!("path '{path}': index {idx} out of range ({len})"))?;
                if last {
                    if !matches!(slot, Value::Integer(_) | Value::Float(_)) {
                        bail!("path '{path}' does not address a number");
                    }
                    *slot = if matches!(slot, Value::Float(_)) { Value::Float(v) } else { number(v) };
                    return Ok(());
                }
                slot
            }
            _ => bail!("path '{path}': '{key}' is not a table or array"),
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub status: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub params: Vec<String>,
    pub metric: String,
    pub rows: Vec<SweepRow>,
    pub argmax: Option<usize>,
}

/// Resolve every point of the cross product into a validated scenario.
pub fn expand(base: &Scenario, grids: &[ParamGrid]) -> Result<Vec<(Vec<f64>, Scenario)>> {
    let doc = Value::try_from(base).map_err(|e| anyhow!("scenario to TOML: {e}"))?;
    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for g in grids {
        points = points
            .into_iter()
            .flat_map(|p| {
                g.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    if grids.is_empty() {
        points.clear();
    }
    // Paths are checked even when the grid is empty.
    for g in grids {
        let mut probe = doc.clone();
        set_path(&mut probe, &g.path, 1.0)?;
    }
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let mut d = doc.clone();
        for (g, v) in grids.iter().zip(&p) {
            set_path(&mut d, &g.path, *v)?;
        }
        let sc: Scenario = d.try_into().map_err(|e| anyhow!("point {p:?}: {e}"))?;
        let v = sc.violations();
        if !v.is_empty() {
            bail!("point {p:?} is invalid: {}", v.join("; "));
        }
        out.push((p, sc));
    }
    Ok(out)
}

pub fn run_sweep(base: &Scenario, grids: &[ParamGrid], metric: Option<&str>) -> Result<SweepTable> {
    let points = expand(base, grids)?;
    let metric = metric.unwrap_or(headline(base.kind)).to_string();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|(values, sc)| match pipeline::run(sc) {
            Ok(r) => SweepRow { values: values.clone(), status: "ok".into(), summary: r.summary },
            Err(e) => SweepRow { values: values.clone(), status: format!("error: {e:#}"), summary: Summary::new() },
        })
        .collect();
    let argmax = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.summary.get(&metric).filter(|v| !v.is_nan()).map(|v| (i, *v)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(SweepTable { params: grids.iter().map(|g| g.path.clone()).collect(), metric, rows, argmax })
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let keys: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.summary.keys()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.params.clone();
        header.push("status".into());
        header.extend(keys.iter().map(|k| k.to_string()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            rec.push(r.status.clone());
            rec.extend(keys.iter().map(|k| r.summary.get(*k).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        Ok(w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_and_ranges() {
        assert_eq!(parse_param("a.b=1,2.5").unwrap().values, vec![1.0, 2.5]);
        assert_eq!(parse_param("a=0:1:5").unwrap().values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_param("a=").unwrap().values.is_empty());
        assert!(parse_param("a=1:2").is_err());
        assert!(parse_param("=1").is_err());
    }

    #[test]
    fn set_path_walks_tables_and_arrays() {
        let mut v: Value = toml::from_str("[x]\ny = 1.5\n[[r]]\nn = 3\n").unwrap();
        set_path(&mut v, "x.y", 2.0).unwrap();
        set_path(&mut v, "r.0.n", 7.0).unwrap();
        assert_eq!(v["x"]["y"].as_float(), Some(2.0));
        assert_eq!(v["r"][0]["n"].as_integer(), Some(7));
        assert!(set_path(&mut v, "q.y", 1.0).is_err());
        assert!(set_path(&mut v, "r.3.n", 1.0).is_err());
    }
}
