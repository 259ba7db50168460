//! Scenario documents: simulation inputs plus static-analysis bounds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calsim::fedmodel::{CoordinationMode, ExecBounds, FederationSpec};
use calsim::maxplus::{MaxPlusMatrix, MaxPlusVector};
use calsim::scenarios::{MergeOp, ScenarioDef};
use calsim::simnet::{ClockModel, Links, SimConfig, Stimulus};
use calsim::timekit::{Interval, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Explicit STA per federate and STAA per `federate.input`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetOverrides {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sta: BTreeMap<String, Interval>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub staa: BTreeMap<String, Interval>,
}

/// Bounds for `cal`. Matrices are indexed `[i][j]` for traffic from `j` to `i`,
/// rows and columns in federate order. Omitted entries are derived from the run inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<MaxPlusMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_error: Option<MaxPlusMatrix>,
    /// Per federate, per reaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec: Option<ExecBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency: Option<MaxPlusMatrix>,
    /// Replaces `O_j + X_ij + L_ij + E_ij` outright.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apparent_latency: Option<MaxPlusMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_offsets: Option<MaxPlusVector>,
    /// `Z`: offsets of physically timestamped inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<MaxPlusVector>,
}

impl Bounds {
    fn is_empty(&self) -> bool {
        *self == Bounds::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn default_tan_period() -> Interval {
    Interval::from_ms(10)
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Overrides `federation.mode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CoordinationMode>,
    pub federation: FederationSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub merges: BTreeMap<String, MergeOp>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub overdraft: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clocks: BTreeMap<String, ClockModel>,
    pub links: Links,
    #[serde(default)]
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub seed: u64,
    pub horizon: Timestamp,
    #[serde(default = "default_tan_period")]
    pub tan_period: Interval,
    #[serde(default, skip_serializing_if = "is_false")]
    pub absent_messages: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<OffsetOverrides>,
    #[serde(default, skip_serializing_if = "Bounds::is_empty")]
    pub bounds: Bounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Output>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: path.to_path_buf(),
            field: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        cfg.validate().map_err(|message| ConfigError::Invalid { path: path.to_path_buf(), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        ScenarioConfig::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_scenario(def: &ScenarioDef) -> ScenarioConfig {
        let c = &def.config;
        ScenarioConfig {
            name: Some(def.name.clone()),
            mode: None,
            federation: c.federation.clone(),
            merges: c.merges.clone(),
            overdraft: c.overdraft,
            clocks: c.clocks.clone(),
            links: c.links.clone(),
            stimuli: c.stimuli.clone(),
            seed: c.seed,
            horizon: c.horizon,
            tan_period: c.tan_period,
            absent_messages: c.absent_messages,
            offsets: None,
            bounds: Bounds::default(),
            output: None,
        }
    }

    pub fn n(&self) -> usize {
        self.federation.federates.len()
    }

    fn validate(&self) -> Result<(), String> {
        let n = self.n();
        let b = &self.bounds;
        for (field, m) in [
            ("latency", &b.latency),
            ("clock_error", &b.clock_error),
            ("inconsistency", &b.inconsistency),
            ("apparent_latency", &b.apparent_latency),
        ] {
            if let Some(m) = m {
                if m.n() != n {
                    return Err(format!("bounds.{field} is {0}x{0}, expected {n}x{n}", m.n()));
                }
            }
        }
        for (field, v) in [("processing_offsets", &b.processing_offsets), ("physical", &b.physical)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(format!("bounds.{field} has {} entries, expected {n}", v.len()));
                }
            }
        }
        self.to_sim().federation.resolve().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// The simulation inputs with mode and offset overrides applied.
    pub fn to_sim(&self) -> SimConfig {
        let mut federation = self.federation.clone();
        if let Some(m) = self.mode {
            federation.mode = m;
        }
        if let Some(o) = &self.offsets {
            for f in &mut federation.federates {
                if let Some(v) = o.sta.get(&f.name) {
                    f.sta = Some(*v);
                }
                for p in &mut f.inputs {
                    if let Some(v) = o.staa.get(&format!("{}.{}", f.name, p.name)) {
                        p.staa = Some(*v);
                    }
                }
            }
        }
        SimConfig {
            federation,
            merges: self.merges.clone(),
            overdraft: self.overdraft,
            clocks: self.clocks.clone(),
            links: self.links.clone(),
            stimuli: self.stimuli.clone(),
            seed: self.seed,
            horizon: self.horizon,
            tan_period: self.tan_period,
            absent_messages: self.absent_messages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_name_the_field() {
        let text = r#"{"federation": {"federates": [], "mode": "sideways"}, "links": {"default": {"latency": "1ms"}}, "horizon": "1s"}"#;
        let e = ScenarioConfig::from_json(text, Path::new("x.json")).unwrap_err();
        assert!(e.to_string().contains("federation.mode"), "{e}");
        let text = r#"{"federation": {"federates": [], "mode": "centralized"}, "links": {"default": {"latency": "1 fortnight"}}, "horizon": "1s"}"#;
        let e = ScenarioConfig::from_json(text, Path::new("x.json")).unwrap_err();
        assert!(e.to_string().contains("links.default.latency"), "{e}");
    }

    #[test]
    fn bounds_shape_is_checked() {
        let text = r#"{"federation": {"federates": [{"name": "a"}], "mode": "centralized"},
            "links": {"default": {"latency": "1ms"}}, "horizon": "1s",
            "bounds": {"latency": [["0", "1ms"], ["1ms", "0"]]}}"#;
        let e = ScenarioConfig::from_json(text, Path::new("x.json")).unwrap_err();
        assert!(e.to_string().contains("bounds.latency is 2x2"), "{e}");
    }

    #[test]
    fn offsets_section_overrides_federation() {
        let text = r#"{"federation": {"federates": [{"name": "a", "inputs": [{"name": "p"}]}], "mode": "decentralized"},
            "links": {"default": {"latency": "1ms"}}, "horizon": "1s",
            "offsets": {"sta": {"a": "3ms"}, "staa": {"a.p": "4ms"}}}"#;
        let sim = ScenarioConfig::from_json(text, Path::new("x.json")).unwrap().to_sim();
        assert_eq!(sim.federation.federates[0].sta, Some(Interval::from_ms(3)));
        assert_eq!(sim.federation.federates[0].inputs[0].staa, Some(Interval::from_ms(4)));
    }
}
