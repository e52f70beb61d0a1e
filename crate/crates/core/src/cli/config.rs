//! Run configuration files (TOML).
//!
//! Angles accept plain radians or a multiple of π written as a string:
//! `"0.25pi"`, `"-pi"`, `"pi/4"`.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::analysis::{WhichBand, Window};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, ProtocolParams};
use crate::noise::{NoiseDistribution, NoiseSpec, Schedule};
use crate::trajectory::RecordMode;

/// Angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angle(pub f64);

impl Angle {
    pub fn parse(s: &str) -> Option<f64> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
        if let Ok(v) = t.parse::<f64>() {
            return Some(v);
        }
        let (num, den) = match t.split_once('/') {
            Some((a, b)) => (a, b.parse::<f64>().ok()?),
            None => (t.as_str(), 1.0),
        };
        let coef = match num.strip_suffix("pi")?.trim_end_matches('*') {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().ok()?,
        };
        Some(coef * PI / den)
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Angle;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an angle in radians or a string like \"0.25pi\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Angle, E> {
                Ok(Angle(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Angle, E> {
                Angle::parse(v).map(Angle).ok_or_else(|| E::custom(format!("cannot read {v:?} as an angle")))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub theta1: Angle,
    pub theta2: Angle,
    pub phi: Angle,
    pub n_sites: usize,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_boundary() -> Boundary {
    Boundary::Open
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Gaussian,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_distribution")]
    pub distribution: DistributionKind,
    /// Standard deviation (Gaussian) or full width (uniform).
    #[serde(default = "zero_angle")]
    pub sigma: Angle,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
}

fn default_distribution() -> DistributionKind {
    DistributionKind::Gaussian
}

fn zero_angle() -> Angle {
    Angle(0.0)
}

fn default_schedule() -> Schedule {
    Schedule::None
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { distribution: default_distribution(), sigma: zero_angle(), schedule: default_schedule(), seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Trajectory,
    Master,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ring {
    Alpha,
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Initial state. A missing `site` means the central cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Site {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        site: Option<usize>,
        #[serde(default = "default_ring")]
        ring: Ring,
    },
    BlochWave {
        k: Angle,
        /// `[α, β]` weights, normalized on use.
        #[serde(default = "default_polarization")]
        polarization: [f64; 2],
    },
    EdgeState {
        #[serde(default = "default_side")]
        side: Side,
    },
}

fn default_ring() -> Ring {
    Ring::Alpha
}

fn default_polarization() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_side() -> Side {
    Side::Left
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Site { site: None, ring: Ring::Alpha }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_engine")]
    pub engine: Engine,
    /// Number of recorded time points; a period is two steps.
    pub steps: usize,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_record")]
    pub record: RecordMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// `population:i`, `coherence:i:j`, `edge:left|right`, `trace`.
    #[serde(default)]
    pub observables: Vec<String>,
}

fn default_engine() -> Engine {
    Engine::Trajectory
}

fn default_realizations() -> usize {
    100
}

fn default_record() -> RecordMode {
    RecordMode::Stroboscopic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsSection {
    #[serde(default)]
    pub window: Window,
    #[serde(default = "default_padding")]
    pub time_padding: usize,
    #[serde(default = "default_bands")]
    pub fit: Vec<WhichBand>,
}

fn default_padding() -> usize {
    1
}

fn default_bands() -> Vec<WhichBand> {
    vec![WhichBand::Upper, WhichBand::Lower]
}

impl Default for BandsSection {
    fn default() -> Self {
        Self { window: Window::None, time_padding: default_padding(), fit: default_bands() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<Angle>,
    #[serde(default = "default_sweep_schedules")]
    pub schedules: Vec<Schedule>,
    #[serde(default)]
    pub theta1: Vec<Angle>,
}

fn default_sweep_schedules() -> Vec<Schedule> {
    vec![Schedule::PerStep, Schedule::Stroboscopic]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub initial: InitialState,
    pub run: RunSection,
    #[serde(default)]
    pub bands: BandsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

const REQUIRED: [(&str, &str); 5] = [
    ("protocol", "theta1"),
    ("protocol", "theta2"),
    ("protocol", "phi"),
    ("protocol", "n_sites"),
    ("run", "steps"),
];

/// Line (1-based) of `key = …` inside `[section]`, for diagnostics.
fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = h.trim().to_string();
        } else if current == section && t.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}

fn at(text: &str, section: &str, key: &str, msg: String) -> Error {
    match line_of(text, section, key) {
        Some(l) => Error::Config(format!("line {l}: {section}.{key}: {msg}")),
        None => Error::Config(format!("{section}.{key}: {msg}")),
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|(s, k)| table.get(*s).and_then(|v| v.as_table()).and_then(|t| t.get(*k)).is_none())
            .map(|(s, k)| format!("{s}.{k}"))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required fields: {}", missing.join(", "))));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_with(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_manifest(&text);
        }
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads the `config` object of a run manifest.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        let cfg = v.get("config").cloned().ok_or_else(|| Error::Config("manifest has no config object".into()))?;
        let cfg: RunConfig = serde_json::from_value(cfg).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<()> {
        let n = self.protocol.n_sites;
        if n < 2 {
            return Err(at(text, "protocol", "n_sites", format!("must be at least 2, got {n}")));
        }
        for (key, a) in [("theta1", self.protocol.theta1), ("theta2", self.protocol.theta2), ("phi", self.protocol.phi)] {
            if !a.0.is_finite() {
                return Err(at(text, "protocol", key, "must be finite".into()));
            }
        }
        let s = self.noise.sigma.0;
        if !s.is_finite() || s < 0.0 {
            return Err(at(text, "noise", "sigma", format!("must be finite and non-negative, got {s}")));
        }
        if self.run.steps == 0 {
            return Err(at(text, "run", "steps", "must be at least 1".into()));
        }
        if self.run.realizations == 0 {
            return Err(at(text, "run", "realizations", "must be at least 1".into()));
        }
        if self.bands.time_padding == 0 {
            return Err(at(text, "bands", "time_padding", "must be at least 1".into()));
        }
        if let InitialState::Site { site: Some(j), .. } = self.initial {
            if j >= n {
                return Err(at(text, "initial", "site", format!("{j} is outside 0..{n}")));
            }
        }
        if let InitialState::BlochWave { polarization, .. } = self.initial {
            if polarization.iter().all(|v| *v == 0.0) {
                return Err(at(text, "initial", "polarization", "must be nonzero".into()));
            }
        }
        for o in &self.run.observables {
            ObservableSpec::parse(o, 2 * n).map_err(|m| at(text, "run", "observables", m))?;
        }
        if let Some(sw) = &self.sweep {
            if sw.sigmas.iter().any(|a| !a.0.is_finite() || a.0 < 0.0) {
                return Err(at(text, "sweep", "sigmas", "must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn protocol(&self) -> Result<ProtocolParams> {
        let p = &self.protocol;
        ProtocolParams::new(p.theta1.0, p.theta2.0, p.phi.0, p.n_sites, p.boundary)
    }

    pub fn distribution(&self, sigma: f64) -> NoiseDistribution {
        match self.noise.distribution {
            DistributionKind::Gaussian => NoiseDistribution::Gaussian { sigma },
            DistributionKind::Uniform => NoiseDistribution::Uniform { sigma },
        }
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.distribution(self.noise.sigma.0), self.noise.schedule, self.noise.seed)
    }

    /// Full periods covered by `steps` time points.
    pub fn periods(&self) -> usize {
        self.run.steps / 2
    }

    pub fn observables(&self) -> Vec<ObservableSpec> {
        self.run.observables.iter().map(|o| ObservableSpec::parse(o, 2 * self.protocol.n_sites).expect("validated")).collect()
    }
}

/// Parsed entry of `run.observables`.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservableSpec {
    Population(usize),
    Coherence(usize, usize),
    Edge(Side),
    Trace,
}

impl ObservableSpec {
    pub fn parse(s: &str, dim: usize) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let index = |t: &str| -> std::result::Result<usize, String> {
            let i: usize = t.parse().map_err(|_| format!("bad index {t:?} in {s:?}"))?;
            if i >= dim {
                return Err(format!("index {i} in {s:?} exceeds dimension {dim}"));
            }
            Ok(i)
        };
        match parts.as_slice() {
            ["trace"] => Ok(ObservableSpec::Trace),
            ["population", i] => Ok(ObservableSpec::Population(index(i)?)),
            ["coherence", i, j] => Ok(ObservableSpec::Coherence(index(i)?, index(j)?)),
            ["edge", "left"] => Ok(ObservableSpec::Edge(Side::Left)),
            ["edge", "right"] => Ok(ObservableSpec::Edge(Side::Right)),
            _ => Err(format!("unknown observable {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[protocol]\ntheta1 = 0\ntheta2 = \"0.25pi\"\nphi = 0\nn_sites = 11\n[run]\nsteps = 10\n";

    #[test]
    fn angles() {
        assert_eq!(Angle::parse("0.25pi"), Some(0.25 * PI));
        assert_eq!(Angle::parse("-pi"), Some(-PI));
        assert_eq!(Angle::parse("pi/4"), Some(PI / 4.0));
        assert_eq!(Angle::parse("2*pi"), Some(2.0 * PI));
        assert_eq!(Angle::parse("1.5"), Some(1.5));
        assert_eq!(Angle::parse("tau"), None);
    }

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.protocol.boundary, Boundary::Open);
        assert_eq!(c.noise.schedule, Schedule::None);
        assert_eq!(c.run.realizations, 100);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn empty_document_lists_all_required_fields() {
        let e = RunConfig::parse("").unwrap_err().to_string();
        for f in ["protocol.theta1", "protocol.theta2", "protocol.phi", "protocol.n_sites", "run.steps"] {
            assert!(e.contains(f), "{e}");
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = RunConfig::parse(&format!("{MINIMAL}bogus = 1\n")).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 8"), "{e}");
    }

    #[test]
    fn range_error_reports_line() {
        let e = RunConfig::parse(&MINIMAL.replace("n_sites = 11", "n_sites = 1")).unwrap_err().to_string();
        assert!(e.contains("line 5") && e.contains("n_sites"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[initial]\nkind = \"site\"\nsite = 40\n")).unwrap_err().to_string();
        assert!(e.contains("line 10"), "{e}");
    }

    #[test]
    fn observables_parse() {
        assert_eq!(ObservableSpec::parse("coherence:0:1", 4), Ok(ObservableSpec::Coherence(0, 1)));
        assert!(ObservableSpec::parse("population:9", 4).is_err());
        assert!(ObservableSpec::parse("energy", 4).is_err());
    }
}
