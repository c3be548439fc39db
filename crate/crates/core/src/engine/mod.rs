//! Pulse propagation through the cavity-ensemble reflection response.
//!
//! A trace is filtered in the frequency domain: `E_out = F⁻¹[r(f) · F[E_in]]`
//! with `r` sampled on the trace's conjugate frequency grid. The time axis is
//! circular, so traces must be long enough to hold every echo of interest.

mod projection;
mod storage;
mod trace;
mod transfer;

pub use projection::{efficiency_vs_tailored_cooperativity, project_efficiency, ProjectionConfig, ProjectionParams, ProjectionPoint, ProjectionTable};
pub use storage::{
    echo_efficiency, find_peak, relative_phase, run_afc_storage, run_double_comb, run_multimode, DoubleCombResult,
    DoubleCombSetup, MultimodeResult, PulseSpec, StorageResult, StorageSetup, Window,
};
pub use trace::{TimeTrace, TraceSpec};
pub use transfer::{propagate, time_domain_oracle, transfer_function, Medium, TransferCache};
