use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::trace::{TimeTrace, TraceSpec};
use super::transfer::{propagate, TransferCache};
use crate::error::{config, Result};

/// Closed time interval in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn around(center: f64, half_width: f64) -> Self {
        Self { start: center - half_width, end: center + half_width }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    /// Open-interval overlap; windows that only touch do not overlap.
    pub fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Gaussian input pulse: intensity FWHM and center in ns, carrier in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub fwhm: f64,
    pub center: f64,
    #[serde(default)]
    pub carrier_mhz: f64,
}

impl PulseSpec {
    pub fn violations(&self) -> Vec<String> {
        if self.fwhm > 0.0 {
            vec![]
        } else {
            vec![format!("pulse fwhm must be > 0 (got {})", self.fwhm)]
        }
    }

    fn trace(&self, spec: TraceSpec, amp: Complex64) -> Result<TimeTrace> {
        let mut tr = TimeTrace::zeros(spec)?;
        tr.add_gaussian(self.center, self.fwhm, amp, self.carrier_mhz);
        Ok(tr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageSetup {
    pub trace: TraceSpec,
    pub pulse: PulseSpec,
    /// Comb period Δ (MHz); the echo is expected `1/Δ` after the input.
    pub delta: f64,
}

impl StorageSetup {
    pub fn storage_time(&self) -> f64 {
        1e3 / self.delta
    }

    /// Integration half-width: 1.5 × FWHM, capped at half the storage time.
    pub fn half_window(&self) -> f64 {
        (1.5 * self.pulse.fwhm).min(0.5 * self.storage_time())
    }

    fn check(&self) -> Result<()> {
        let mut v = self.trace.violations();
        v.extend(self.pulse.violations());
        if !(self.delta > 0.0) {
            v.push(format!("comb period must be > 0 (got {})", self.delta));
        }
        if v.is_empty() {
            Ok(())
        } else {
            config(v.join("; "))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageResult {
    pub input: TimeTrace,
    pub output: TimeTrace,
    pub efficiency: f64,
    /// Absolute time of the echo maximum (ns).
    pub echo_time: f64,
    pub window: Window,
    pub diagnostics: BTreeMap<String, f64>,
}

/// `Σ_window |E_out|² / Σ_all |E_in|²`.
pub fn echo_efficiency(output: &TimeTrace, input: &TimeTrace, window: Window, input_window: Window) -> Result<f64> {
    if window.overlaps(&input_window) {
        return config(format!(
            "echo window [{:.2}, {:.2}] ns overlaps the reflected-input window [{:.2}, {:.2}] ns",
            window.start, window.end, input_window.start, input_window.end
        ));
    }
    if window.start < output.t_start || window.end > output.t_end() {
        return config(format!(
            "echo window [{:.2}, {:.2}] ns lies outside the trace [{:.2}, {:.2}] ns",
            window.start,
            window.end,
            output.t_start,
            output.t_end()
        ));
    }
    let e_in = input.energy();
    if !(e_in > 0.0) {
        return config("input trace carries no energy");
    }
    Ok(output.energy_in(window.start, window.end) / e_in)
}

/// Time of the strongest local intensity maximum strictly inside `window`,
/// refined by a parabola through the three samples around it. Falls back to
/// the largest sample when the window holds no interior maximum (e.g. only
/// the tail of the reflected input).
pub fn find_peak(trace: &TimeTrace, window: Window) -> Option<f64> {
    let inten = trace.intensity();
    let idx: Vec<usize> = (0..inten.len()).filter(|&k| window.contains(trace.time(k))).collect();
    let (&first, &last) = (idx.first()?, idx.last()?);
    let interior = (first + 1..last).filter(|&k| inten[k] > inten[k - 1] && inten[k] >= inten[k + 1]);
    let best = |it: &mut dyn Iterator<Item = usize>| it.max_by(|&a, &b| inten[a].total_cmp(&inten[b]));
    let k = best(&mut interior.into_iter()).or_else(|| best(&mut idx.iter().copied()))?;
    if k == 0 || k + 1 >= inten.len() {
        return Some(trace.time(k));
    }
    let (a, b, c) = (inten[k - 1], inten[k], inten[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Some(trace.time(k) + shift.clamp(-0.5, 0.5) * trace.dt)
}

/// Single-pulse AFC storage: propagate, locate the echo, integrate it.
pub fn run_afc_storage(cache: &TransferCache, setup: &StorageSetup) -> Result<StorageResult> {
    setup.check()?;
    let input = setup.pulse.trace(setup.trace, Complex64::new(1.0, 0.0))?;
    let r = cache.for_trace(&setup.trace)?;
    let output = propagate(&input, &r)?;

    let t0 = setup.pulse.center;
    let storage = setup.storage_time();
    let hw = setup.half_window();
    let input_window = Window::around(t0, hw);
    let window = Window::around(t0 + storage, hw);
    let efficiency = echo_efficiency(&output, &input, window, input_window)?;
    let echo_time = find_peak(&output, window).unwrap_or(f64::NAN);

    let e_in = input.energy();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("storage_time_ns".into(), storage);
    diagnostics.insert("echo_delay_ns".into(), echo_time - t0);
    diagnostics.insert("reflected_fraction".into(), output.energy_in(input_window.start, input_window.end) / e_in);
    diagnostics.insert("output_energy_ratio".into(), output.energy() / e_in);
    // How much of the bare input pulse would fall inside the echo window.
    diagnostics.insert("input_tail_in_window".into(), input.energy_in(window.start, window.end) / e_in);
    let second = Window::around(t0 + 2.0 * storage, hw);
    if second.end <= output.t_end() {
        diagnostics.insert("second_echo_efficiency".into(), output.energy_in(second.start, second.end) / e_in);
        diagnostics.insert("second_echo_time_ns".into(), find_peak(&output, second).unwrap_or(f64::NAN));
    }
    Ok(StorageResult { input, output, efficiency, echo_time, window, diagnostics })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultimodeResult {
    pub storage: StorageResult,
    pub input_times: Vec<f64>,
    pub echo_times: Vec<f64>,
    pub mode_efficiencies: Vec<f64>,
}

/// Train of `n_modes` identical pulses spaced by `mode_spacing` ns.
pub fn run_multimode(cache: &TransferCache, setup: &StorageSetup, n_modes: usize, mode_spacing: f64) -> Result<MultimodeResult> {
    setup.check()?;
    let storage = setup.storage_time();
    if n_modes == 0 {
        return config("n_modes must be >= 1");
    }
    if n_modes > 1 && !(mode_spacing > 0.0) {
        return config(format!("mode spacing must be > 0 (got {mode_spacing})"));
    }
    if n_modes > 1 && n_modes as f64 * mode_spacing >= storage {
        return config(format!(
            "mode train of {n_modes} x {mode_spacing} ns is not shorter than the storage time {storage:.2} ns"
        ));
    }
    let input_times: Vec<f64> = (0..n_modes).map(|k| setup.pulse.center + k as f64 * mode_spacing).collect();
    let mut input = TimeTrace::zeros(setup.trace)?;
    for &t in &input_times {
        input.add_gaussian(t, setup.pulse.fwhm, Complex64::new(1.0, 0.0), setup.pulse.carrier_mhz);
    }
    let single = setup.pulse.trace(setup.trace, Complex64::new(1.0, 0.0))?.energy();
    let r = cache.for_trace(&setup.trace)?;
    let output = propagate(&input, &r)?;

    let hw = if n_modes > 1 { setup.half_window().min(mode_spacing / 2.0) } else { setup.half_window() };
    let mut echo_times = Vec::with_capacity(n_modes);
    let mut mode_efficiencies = Vec::with_capacity(n_modes);
    for &t in &input_times {
        let w = Window::around(t + storage, hw);
        let inw = Window::around(t, hw);
        if w.overlaps(&inw) || w.end > output.t_end() {
            return config("mode echo window does not fit the trace");
        }
        mode_efficiencies.push(output.energy_in(w.start, w.end) / single);
        echo_times.push(find_peak(&output, w).unwrap_or(f64::NAN));
    }
    let first = Window { start: input_times[0] + storage - hw, end: input_times[n_modes - 1] + storage + hw };
    let in_span = Window { start: input_times[0] - hw, end: input_times[n_modes - 1] + hw };
    let efficiency = echo_efficiency(&output, &input, first, in_span)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("storage_time_ns".into(), storage);
    diagnostics.insert("n_modes".into(), n_modes as f64);
    let mean = mode_efficiencies.iter().sum::<f64>() / n_modes as f64;
    let spread = mode_efficiencies.iter().map(|e| (e - mean).abs()).fold(0.0, f64::max) / mean;
    diagnostics.insert("mode_efficiency_spread".into(), spread);
    let storage_result = StorageResult { input, output, efficiency, echo_time: echo_times[0], window: first, diagnostics };
    Ok(MultimodeResult { storage: storage_result, input_times, echo_times, mode_efficiencies })
}

/// φ_rel = 2π(δ₂/Δ₂ − δ₁/Δ₁), wrapped to (−π, π].
pub fn relative_phase(delta1: f64, delta2: f64, det1: f64, det2: f64) -> f64 {
    let phi = 2.0 * PI * (det2 / delta2 - det1 / delta1);
    phi - 2.0 * PI * ((phi - PI) / (2.0 * PI)).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleCombSetup {
    pub trace: TraceSpec,
    /// The early pulse; the late pulse follows after `separation`.
    pub pulse: PulseSpec,
    pub delta1: f64,
    pub delta2: f64,
    pub early_amp: Complex64,
    pub late_amp: Complex64,
    /// Early-late separation (ns); must equal |1/Δ₁ − 1/Δ₂| within one step.
    pub separation: f64,
}

impl DoubleCombSetup {
    pub fn matched_separation(delta1: f64, delta2: f64) -> f64 {
        (1e3 / delta1 - 1e3 / delta2).abs()
    }

    /// Echo slot centers: early via the short comb, the overlap, late via
    /// the long comb.
    pub fn slot_times(&self) -> [f64; 3] {
        let (t1, t2) = (1e3 / self.delta1, 1e3 / self.delta2);
        let (short, long) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let te = self.pulse.center;
        [te + short, te + long, te + self.separation + long]
    }

    pub fn half_window(&self) -> f64 {
        (1.5 * self.pulse.fwhm).min(self.separation / 2.0)
    }

    pub fn early_window(&self) -> Window {
        Window::around(self.pulse.center, self.half_window())
    }

    pub fn late_window(&self) -> Window {
        Window::around(self.pulse.center + self.separation, self.half_window())
    }

    pub fn slot_windows(&self) -> [Window; 3] {
        self.slot_times().map(|t| Window::around(t, self.half_window()))
    }

    fn check(&self) -> Result<()> {
        let mut v = self.trace.violations();
        v.extend(self.pulse.violations());
        if !(self.delta1 > 0.0 && self.delta2 > 0.0) {
            v.push("double comb periods must be > 0".into());
        } else {
            let want = Self::matched_separation(self.delta1, self.delta2);
            if (self.separation - want).abs() > self.trace.dt {
                v.push(format!(
                    "early/late separation {} ns does not match |1/Δ₁ − 1/Δ₂| = {want:.3} ns within one time step",
                    self.separation
                ));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            config(v.join("; "))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoubleCombResult {
    pub input: TimeTrace,
    pub output: TimeTrace,
    pub slot_times: [f64; 3],
    /// Slot energies relative to one unit-amplitude input pulse.
    pub slot_energies: [f64; 3],
    pub overlap_energy: f64,
    pub early_only_overlap: f64,
    pub late_only_overlap: f64,
    /// 2√(e_early e_late)/(e_early + e_late): fringe visibility of a perfect detector.
    pub predicted_visibility: f64,
}

pub fn run_double_comb(cache: &TransferCache, setup: &DoubleCombSetup) -> Result<DoubleCombResult> {
    setup.check()?;
    let r = cache.for_trace(&setup.trace)?;
    let late = PulseSpec { center: setup.pulse.center + setup.separation, ..setup.pulse };
    let early_in = setup.pulse.trace(setup.trace, setup.early_amp)?;
    let late_in = late.trace(setup.trace, setup.late_amp)?;
    let input = early_in.axpy(Complex64::new(1.0, 0.0), &late_in, Complex64::new(1.0, 0.0))?;
    let output = propagate(&input, &r)?;
    let unit = setup.pulse.trace(setup.trace, Complex64::new(1.0, 0.0))?.energy();

    let windows = setup.slot_windows();
    for w in &windows {
        if w.overlaps(&setup.early_window()) || w.overlaps(&setup.late_window()) || w.end > output.t_end() {
            return config("double-comb echo slots overlap the inputs or leave the trace");
        }
    }
    let slot_energies = windows.map(|w| output.energy_in(w.start, w.end) / unit);
    let ow = windows[1];
    let early_only_overlap = propagate(&early_in, &r)?.energy_in(ow.start, ow.end) / unit;
    let late_only_overlap = propagate(&late_in, &r)?.energy_in(ow.start, ow.end) / unit;
    let denom = early_only_overlap + late_only_overlap;
    let predicted_visibility = if denom > 0.0 { 2.0 * (early_only_overlap * late_only_overlap).sqrt() / denom } else { 0.0 };
    Ok(DoubleCombResult {
        input,
        output,
        slot_times: setup.slot_times(),
        slot_energies,
        overlap_energy: slot_energies[1],
        early_only_overlap,
        late_only_overlap,
        predicted_visibility,
    })
}
