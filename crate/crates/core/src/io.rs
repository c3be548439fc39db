//! CSV/JSON serialization of densities, spectra, traces and count records.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::detection::{DetectionRecord, DetectorModel};
use crate::engine::TimeTrace;
use crate::ensemble::{FrequencyGrid, SpectralDensity};
use crate::error::{config, Result};

/// Grid metadata stored next to a density CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHeader {
    pub grid_start: f64,
    pub grid_step: f64,
    pub len: usize,
    pub reservoir_ratio: f64,
    pub total_active: f64,
    pub total_population: f64,
}

impl DensityHeader {
    pub fn of(density: &SpectralDensity) -> Self {
        Self {
            grid_start: density.grid.start,
            grid_step: density.grid.step,
            len: density.grid.len,
            reservoir_ratio: density.reservoir_ratio,
            total_active: density.total_active(),
            total_population: density.total_population(),
        }
    }
}

pub fn write_density_csv<W: Write>(out: W, density: &SpectralDensity) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_MHz", "active", "shelved"])?;
    for i in 0..density.len() {
        w.write_record(&[
            density.grid.freq(i).to_string(),
            density.active[i].to_string(),
            density.shelved[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct DensityRow {
    #[serde(rename = "freq_MHz")]
    _freq: f64,
    active: f64,
    shelved: f64,
}

pub fn read_density_csv<R: Read>(input: R, header: &DensityHeader) -> Result<SpectralDensity> {
    let mut active = Vec::with_capacity(header.len);
    let mut shelved = Vec::with_capacity(header.len);
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: DensityRow = row?;
        active.push(row.active);
        shelved.push(row.shelved);
    }
    let grid = FrequencyGrid::new(header.grid_start, header.grid_step, header.len)?;
    let mut d = SpectralDensity::from_active(grid, active)?;
    if shelved.iter().any(|s| !(*s >= 0.0)) {
        return config("shelved density must be non-negative");
    }
    d.shelved = shelved;
    d.reservoir_ratio = header.reservoir_ratio;
    Ok(d)
}

/// Reflection spectrum; frequencies in MHz, written as GHz detuning.
pub fn write_spectrum_csv<W: Write>(out: W, freqs_mhz: &[f64], r: &[Complex64]) -> Result<()> {
    if freqs_mhz.len() != r.len() {
        return config("spectrum frequency and value lengths differ");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_GHz_detuning", "re_r", "im_r", "abs_r_sq"])?;
    for (f, v) in freqs_mhz.iter().zip(r) {
        w.write_record(&[(f / 1e3).to_string(), v.re.to_string(), v.im.to_string(), v.norm_sqr().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// (frequency MHz, |r|²) pairs from a spectrum CSV. Accepts either the
/// `freq_GHz_detuning,...,abs_r_sq` layout or two columns `freq_MHz,abs_r_sq`.
pub fn read_reflectance_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (fcol, scale) = match (col("freq_GHz_detuning"), col("freq_MHz")) {
        (Some(i), _) => (i, 1e3),
        (None, Some(i)) => (i, 1.0),
        _ => return config("spectrum CSV needs a freq_GHz_detuning or freq_MHz column"),
    };
    let Some(rcol) = col("abs_r_sq") else {
        return config("spectrum CSV needs an abs_r_sq column");
    };
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| crate::Error::Config(format!("spectrum CSV row {}: column {} is not a number", line + 2, i + 1)))
        };
        out.push((parse(fcol)? * scale, parse(rcol)?));
    }
    Ok(out)
}

/// Named traces on a shared time axis: `t_ns` then `<name>_re, <name>_im,
/// <name>_intensity` per trace.
pub fn write_traces_csv<W: Write>(out: W, traces: &[(&str, &TimeTrace)]) -> Result<()> {
    let Some((_, first)) = traces.first() else {
        return config("no traces to write");
    };
    if traces.iter().any(|(_, t)| t.len() != first.len() || t.dt != first.dt || t.t_start != first.t_start) {
        return config("traces do not share a time axis");
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t_ns".to_string()];
    for (name, _) in traces {
        header.extend([format!("{name}_re"), format!("{name}_im"), format!("{name}_intensity")]);
    }
    w.write_record(&header)?;
    for k in 0..first.len() {
        let mut row = vec![first.time(k).to_string()];
        for (_, t) in traces {
            let e = t.samples[k];
            row.extend([e.re.to_string(), e.im.to_string(), e.norm_sqr().to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_record_csv<W: Write>(out: W, record: &DetectionRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "bin_end", "counts", "expected_mean"])?;
    for ((&(a, b), c), m) in record.bin_edges.iter().zip(&record.counts).zip(&record.expected_means) {
        w.write_record(&[a.to_string(), b.to_string(), c.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON metadata accompanying a record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub model: DetectorModel,
    pub seed: u64,
    pub n_bins: usize,
}

impl RecordMeta {
    pub fn of(record: &DetectionRecord) -> Self {
        Self { model: record.model, seed: record.model.seed, n_bins: record.counts.len() }
    }
}

pub fn write_json<W: Write, T: Serialize>(out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}
