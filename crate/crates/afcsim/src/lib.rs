//! Scenario loading, pipelines, sweeps, result bundles and plots for the
//! AFC storage simulator. The `afcsim` binary is a thin CLI over this.

pub mod bundle;
pub mod pipeline;
pub mod plots;
pub mod presets;
pub mod scenario;
pub mod sweep;

pub use pipeline::{run, RunOutput};
pub use scenario::{load_scenario, LoadError, Scenario};

/// Load a scenario from a path, or from a bundled preset when `spec` names one
/// and no such file exists.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, LoadError> {
    let path = std::path::Path::new(spec);
    if !path.exists() {
        if let Some(text) = presets::preset(spec) {
            return Scenario::from_toml(text);
        }
    }
    load_scenario(path)
}
