//! SVG figures rendered from a result bundle. Missing inputs are skipped
//! with a warning rather than failing.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use serde_json::Value;

#[derive(Debug, Default)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

type Table = (Vec<String>, Vec<Vec<f64>>);

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

fn column(t: &Table, name: &str) -> Result<Vec<f64>> {
    let i = t.0.iter().position(|h| h == name).ok_or_else(|| anyhow!("missing column {name}"))?;
    Ok(t.1.iter().map(|r| r[i]).collect())
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-12);
    (lo - pad, hi + pad)
}

type Series<'a> = (&'a str, &'a [f64], &'a [f64], RGBColor);

fn line_plot(out: &Path, title: &str, xl: &str, yl: &str, series: &[Series], markers: &[f64]) -> Result<()> {
    let root = SVGBackend::new(out, (900, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let xr = bounds(series.iter().flat_map(|s| s.1.iter().copied()));
    let yr = bounds(series.iter().flat_map(|s| s.2.iter().copied()));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(70)
        .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)?;
    chart.configure_mesh().x_desc(xl).y_desc(yl).draw()?;
    for &(name, xs, ys, color) in series {
        chart
            .draw_series(LineSeries::new(
                xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)),
                color.stroke_width(2),
            ))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    for &m in markers {
        chart.draw_series(std::iter::once(PathElement::new(vec![(m, yr.0), (m, yr.1)], BLACK.mix(0.5))))?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn report(dir: &Path) -> Option<Value> {
    std::fs::read_to_string(dir.join("report.json")).ok().and_then(|s| serde_json::from_str(&s).ok())
}

fn markers(rep: &Option<Value>) -> Vec<f64> {
    rep.as_ref()
        .and_then(|r| r.get("markers_ns"))
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default()
}

fn spectrum(dir: &Path, name: &str, out: &Path) -> Result<()> {
    let t = read_table(&dir.join(name))?;
    let f: Vec<f64> = column(&t, "freq_GHz_detuning")?.iter().map(|x| x * 1e3).collect();
    let r = column(&t, "abs_r_sq")?;
    let mut series: Vec<Series> = vec![("|r|²", &f, &r, BLUE)];
    let fit = column(&t, "fit_abs_r_sq").ok();
    if let Some(fit) = &fit {
        series.push(("fit", &f, fit, RED));
    }
    line_plot(out, "Reflection spectrum", "detuning (MHz)", "|r|²", &series, &[])
}

fn comb(dir: &Path, out: &Path) -> Result<()> {
    let t = read_table(&dir.join("comb_profile.csv"))?;
    let f = column(&t, "freq_MHz")?;
    let th = column(&t, "thermal")?;
    let a = column(&t, "active")?;
    line_plot(out, "Comb profile", "detuning (MHz)", "active density", &[("thermal", &f, &th, BLACK), ("tailored", &f, &a, BLUE)], &[])
}

fn traces(dir: &Path, out: &Path, rep: &Option<Value>) -> Result<()> {
    let t = read_table(&dir.join("traces.csv"))?;
    let time = column(&t, "t_ns")?;
    let peak = column(&t, "input_intensity")?.iter().cloned().fold(0.0, f64::max).max(1e-300);
    // Log scale: echoes sit orders of magnitude below the input.
    let log = |v: Vec<f64>| -> Vec<f64> { v.iter().map(|x| (x / peak).max(1e-12).log10()).collect() };
    let i = log(column(&t, "input_intensity")?);
    let o = log(column(&t, "output_intensity")?);
    line_plot(
        out,
        "Time traces",
        "time (ns)",
        "log10 intensity (rel. input peak)",
        &[("input", &time, &i, BLACK), ("output", &time, &o, BLUE)],
        &markers(rep),
    )
}

fn fringe(dir: &Path, out: &Path, rep: &Option<Value>) -> Result<()> {
    let t = read_table(&dir.join("fringe.csv"))?;
    let x = column(&t, "det2_MHz")?;
    let n = column(&t, "counts")?;
    let e = column(&t, "error")?;
    let fit = rep
        .as_ref()
        .and_then(|r| Some((r.get("sinusoid_raw")?.clone(), r.get("period_mhz")?.as_f64()?)))
        .ok_or_else(|| anyhow!("report.json has no sinusoid fit"))?;
    let g = |k: &str| fit.0.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
    let (off, amp, ph, period) = (g("offset"), g("amplitude"), g("phase"), fit.1);
    let xr = bounds(x.iter().copied());
    let yr = bounds(n.iter().zip(&e).flat_map(|(n, e)| [n - e, n + e]).chain([0.0]));
    let root = SVGBackend::new(out, (900, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Overlap-slot counts vs second-comb detuning", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(60)
        .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)?;
    chart.configure_mesh().x_desc("δ₂ (MHz)").y_desc("counts").draw()?;
    chart.draw_series(x.iter().zip(&n).zip(&e).map(|((x, n), e)| PathElement::new(vec![(*x, n - e), (*x, n + e)], BLACK)))?;
    chart.draw_series(x.iter().zip(&n).map(|(x, n)| Circle::new((*x, *n), 4, BLUE.filled())))?;
    let k = 400;
    chart.draw_series(LineSeries::new(
        (0..=k).map(|i| {
            let xx = xr.0 + (xr.1 - xr.0) * i as f64 / k as f64;
            (xx, off + amp * (2.0 * std::f64::consts::PI * xx / period + ph).cos())
        }),
        RED.stroke_width(2),
    ))?;
    root.present()?;
    Ok(())
}

fn projection(dir: &Path, out: &Path) -> Result<()> {
    let t = read_table(&dir.join("projection.csv"))?;
    let q = column(&t, "intrinsic_q")?;
    let f = column(&t, "finesse")?;
    let eff = column(&t, "efficiency")?;
    let mut qs: Vec<f64> = q.clone();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    let palette = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];
    let data: Vec<(String, Vec<f64>, Vec<f64>)> = qs
        .iter()
        .map(|qq| {
            let mut pts: Vec<(f64, f64)> = (0..q.len()).filter(|&i| q[i] == *qq).map(|i| (f[i], eff[i])).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (format!("Q_i = {qq:.1e}"), pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect())
        })
        .collect();
    let series: Vec<Series> = data.iter().enumerate().map(|(i, d)| (d.0.as_str(), &d.1[..], &d.2[..], palette[i % palette.len()])).collect();
    line_plot(out, "Projected efficiency", "comb finesse", "efficiency", &series, &[])
}

/// Render every figure the bundle has inputs for into `dir/plots`.
pub fn emit_plots(dir: &Path) -> PlotReport {
    let mut rep = PlotReport::default();
    if !dir.is_dir() {
        rep.warnings.push(format!("{} is not a directory", dir.display()));
        return rep;
    }
    let plots = dir.join("plots");
    let report_json = report(dir);
    let mut jobs: Vec<(String, Box<dyn Fn(&Path) -> Result<()> + '_>)> = vec![
        ("comb_profile".into(), Box::new(|o: &Path| comb(dir, o))),
        ("traces".into(), Box::new(|o: &Path| traces(dir, o, &report_json))),
        ("fringe".into(), Box::new(|o: &Path| fringe(dir, o, &report_json))),
        ("projection".into(), Box::new(|o: &Path| projection(dir, o))),
        ("reflection_spectrum".into(), Box::new(|o: &Path| spectrum(dir, "spectrum.csv", o))),
    ];
    let mut fits: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok()?.file_name().into_string().ok())
                .filter(|n| n.starts_with("spectrum_") && n.ends_with(".csv"))
                .collect()
        })
        .unwrap_or_default();
    fits.sort();
    for name in fits {
        let stem = format!("reflection_{}", name.trim_end_matches(".csv"));
        jobs.push((stem, Box::new(move |o: &Path| spectrum(dir, &name, o))));
    }
    for (stem, job) in jobs {
        let out = plots.join(format!("{stem}.svg"));
        if let Err(e) = std::fs::create_dir_all(&plots) {
            rep.warnings.push(format!("{stem}: {e}"));
            continue;
        }
        match job(&out) {
            Ok(()) => rep.written.push(out),
            Err(e) => {
                let _ = std::fs::remove_file(&out);
                rep.warnings.push(format!("skipped {stem}: {e:#}"));
            }
        }
    }
    if rep.written.is_empty() {
        let _ = std::fs::remove_dir(&plots);
    }
    rep
}
