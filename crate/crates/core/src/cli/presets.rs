//! Named configurations shipped with the binary.

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 8] = [
    ("fig2a", include_str!("../../presets/fig2a.toml")),
    ("fig2b", include_str!("../../presets/fig2b.toml")),
    ("fig2c", include_str!("../../presets/fig2c.toml")),
    ("fig3a", include_str!("../../presets/fig3a.toml")),
    ("fig3b", include_str!("../../presets/fig3b.toml")),
    ("fig3c", include_str!("../../presets/fig3c.toml")),
    ("fig4", include_str!("../../presets/fig4.toml")),
    ("supp-return", include_str!("../../presets/supp-return.toml")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = preset_text(name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
        Error::Config(format!("unknown preset {name:?} (available: {})", names.join(", ")))
    })?;
    RunConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_round_trip() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c, "{name}");
        }
    }
}
