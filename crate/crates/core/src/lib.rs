//! Numerical model of atomic-frequency-comb (AFC) optical storage in an
//! inhomogeneously broadened ion ensemble coupled to a single-sided cavity.
//!
//! Units used throughout: frequencies and rates in MHz (cyclic, full widths),
//! times in ns for traces and μs where a product with MHz is formed.
//!
//! - [`ensemble`]: spectral density of active/shelved ions and the tailoring
//!   operations (pump sweeps, hyperfine initialization, accumulated combs,
//!   superhyperfine blur, shelf relaxation).
//! - [`cavity`]: ensemble coupling rate, reflection coefficient, cooperativity
//!   and reflection-spectrum fitting.
//! - [`engine`]: pulse propagation through the reflection transfer function,
//!   echo efficiency, multimode and double-comb runs, efficiency projection.
//! - [`detection`]: photon counting, fringe fits, time-bin fidelities and the
//!   decoy-state single-photon bound.

pub mod cavity;
pub mod detection;
pub mod engine;
pub mod ensemble;
mod error;
pub mod fit;
pub mod io;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
