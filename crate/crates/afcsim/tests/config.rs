use afcsim::presets::{preset, PRESETS};
use afcsim::{LoadError, Scenario};

fn base() -> String {
    preset("fig2_storage").unwrap().to_string()
}

fn invalid(text: &str) -> Vec<String> {
    match Scenario::from_toml(text) {
        Err(LoadError::Invalid(v)) => v,
        other => panic!("expected invariant violations, got {other:?}"),
    }
}

#[test]
fn every_preset_loads() {
    for (name, text) in PRESETS {
        let sc = Scenario::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&sc.name, name);
    }
}

#[test]
fn empty_and_garbage_files_are_parse_errors() {
    assert!(matches!(Scenario::from_toml(""), Err(LoadError::Parse(_))));
    assert!(matches!(Scenario::from_toml("name = "), Err(LoadError::Parse(_))));
    assert!(matches!(Scenario::from_toml("[[[oops"), Err(LoadError::Parse(_))));
}

#[test]
fn unknown_fields_and_ops_are_rejected() {
    let t = base().replace("loaded_q = 7000.0", "loaded_q = 7000.0\nloaded_qq = 1.0");
    assert!(matches!(Scenario::from_toml(&t), Err(LoadError::Parse(_))));
    let t = base().replace("op = \"pump_sweep\"", "op = \"pump_swept\"");
    assert!(matches!(Scenario::from_toml(&t), Err(LoadError::Parse(_))));
    let t = base().replace("kind = \"storage\"", "kind = \"teleport\"");
    assert!(matches!(Scenario::from_toml(&t), Err(LoadError::Parse(_))));
}

#[test]
fn missing_section_for_kind() {
    let t = base();
    let cut = t.find("[input]").unwrap();
    let end = t[cut + 1..].find("\n[").map_or(t.len(), |i| cut + 1 + i);
    let v = invalid(&format!("{}{}", &t[..cut], &t[end..]));
    assert!(v.iter().any(|m| m.contains("[input]")), "{v:?}");
}

#[test]
fn tooth_width_must_be_below_delta() {
    let comb = "\n[[recipe]]\nop = \"comb\"\ndelta = 2.0\ntooth_width = 2.5\nn_teeth = 10\ntooth_shape = \"gaussian\"\n";
    let t = base().replacen("[[recipe]]", &format!("{comb}\n[[recipe]]"), 1);
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.contains("tooth_width")), "{v:?}");
}

#[test]
fn out_of_range_values_are_listed_together() {
    let t = base()
        .replace("loaded_q = 7000.0", "loaded_q = -1.0")
        .replace("input_fraction = 0.15", "input_fraction = 1.5")
        .replace("pulse_fwhm = 60.0", "pulse_fwhm = 0.0");
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.contains("loaded_q")), "{v:?}");
    assert!(v.iter().any(|m| m.contains("input_fraction") || m.contains("input coupling")), "{v:?}");
    assert!(v.iter().any(|m| m.contains("pulse_fwhm")), "{v:?}");
}

#[test]
fn recipe_step_invariants() {
    for (from, to, needle) in [
        ("transfer_prob = 0.5", "transfer_prob = 1.5", "transfer"),
        ("width = 1.5", "width = 0.0", "width"),
        ("enhancement = 3.0", "enhancement = 0.5", "enhancement"),
    ] {
        let t = base().replacen(from, to, 1);
        assert_ne!(t, base(), "fixture lacks '{from}'");
        let v = invalid(&t);
        assert!(v.iter().any(|m| m.contains(needle) && m.starts_with("recipe[")), "{to}: {v:?}");
    }
}

#[test]
fn accumulated_comb_needs_a_fine_grid() {
    let t = preset("fig3_accumulated").unwrap().replace("grid_step = 0.0078125", "grid_step = 0.05");
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.contains("grid_step must be <=")), "{v:?}");
}

#[test]
fn echo_must_fit_the_trace() {
    let t = base().replace("n_samples = 4000", "n_samples = 500");
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.starts_with("input")), "{v:?}");
}

#[test]
fn fringe_needs_enough_points() {
    let t = preset("fig4b_visibility").unwrap();
    let start = t.find("det2_sweep").unwrap();
    let end = start + t[start..].find(']').unwrap() + 1;
    let v = invalid(&format!("{}det2_sweep = [0.0, 1.0]{}", &t[..start], &t[end..]));
    assert!(v.iter().any(|m| m.contains("det2_sweep")), "{v:?}");
}

#[test]
fn fidelity_intensities_are_ordered() {
    let t = preset("fidelity_decoy").unwrap().replace("mu = 0.6", "mu = 0.2");
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.contains("mu > nu")), "{v:?}");
}

#[test]
fn expectations_need_a_bound() {
    let t = format!("{}\n[[expected]]\nkey = \"efficiency\"\n", base());
    let v = invalid(&t);
    assert!(v.iter().any(|m| m.contains("needs min and/or max")), "{v:?}");
}

#[test]
fn scenario_round_trips_through_toml() {
    for (_, text) in PRESETS {
        let sc = Scenario::from_toml(text).unwrap();
        let again = Scenario::from_toml(&toml::to_string(&sc).unwrap()).unwrap();
        assert_eq!(sc, again);
    }
}
