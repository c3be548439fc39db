//! Scenario files bundled into the binary.

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1c_fit", include_str!("../presets/fig1c_fit.toml")),
    ("fig2_storage", include_str!("../presets/fig2_storage.toml")),
    ("fig3_accumulated", include_str!("../presets/fig3_accumulated.toml")),
    ("fig4a_multimode", include_str!("../presets/fig4a_multimode.toml")),
    ("fig4b_visibility", include_str!("../presets/fig4b_visibility.toml")),
    ("fidelity_decoy", include_str!("../presets/fidelity_decoy.toml")),
    ("projection_90", include_str!("../presets/projection_90.toml")),
    ("impedance_match", include_str!("../presets/impedance_match.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
