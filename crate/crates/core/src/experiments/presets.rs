//! Shipped experiment configurations.

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 8] = [
    ("shift", include_str!("../../presets/shift.toml")),
    (
        "shift_rotate",
        include_str!("../../presets/shift_rotate.toml"),
    ),
    (
        "digit_swap_plain",
        include_str!("../../presets/digit_swap_plain.toml"),
    ),
    (
        "digit_swap_masked",
        include_str!("../../presets/digit_swap_masked.toml"),
    ),
    (
        "gaussian_1d",
        include_str!("../../presets/gaussian_1d.toml"),
    ),
    (
        "dynamics_1d",
        include_str!("../../presets/dynamics_1d.toml"),
    ),
    ("gain_sweep", include_str!("../../presets/gain_sweep.toml")),
    ("illposed", include_str!("../../presets/illposed.toml")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::Config(format!(
            "unknown preset `{name}`; available: {}",
            names.join(", ")
        ))
    })?;
    ExperimentConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_err());
    }
}
