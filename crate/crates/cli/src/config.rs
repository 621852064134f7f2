//! Scenario configs: a TOML file plus `--set key=value` overrides, checked
//! against the defaults of the chosen scenario before anything runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::scenarios::{
    CatchReleaseParams, CzParams, NsDispersiveParams, NsPuscParams, NsScParams, SweepParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown scenario '{0}' (expected ns-sc, ns-pusc, ns-dispersive, cz, catch-release or sweep)")]
    UnknownScenario(String),
    #[error("override '{0}' is not of the form key=value")]
    Malformed(String),
    #[error("'{path}' is not a parameter of scenario {scenario}")]
    InvalidPath { scenario: ScenarioId, path: String },
    #[error("'{path}' expects {expected}, got {found}")]
    TypeMismatch { path: String, expected: &'static str, found: &'static str },
    #[error("invalid parameters for {scenario}: {message}")]
    Schema { scenario: ScenarioId, message: String },
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "ns-sc")]
    NsSc,
    #[serde(rename = "ns-pusc")]
    NsPusc,
    #[serde(rename = "ns-dispersive")]
    NsDispersive,
    #[serde(rename = "cz")]
    Cz,
    #[serde(rename = "catch-release")]
    CatchRelease,
    #[serde(rename = "sweep")]
    Sweep,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::NsSc,
        ScenarioId::NsPusc,
        ScenarioId::NsDispersive,
        ScenarioId::Cz,
        ScenarioId::CatchRelease,
        ScenarioId::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::NsSc => "ns-sc",
            ScenarioId::NsPusc => "ns-pusc",
            ScenarioId::NsDispersive => "ns-dispersive",
            ScenarioId::Cz => "cz",
            ScenarioId::CatchRelease => "catch-release",
            ScenarioId::Sweep => "sweep",
        }
    }

    /// The scenario's parameter schema, i.e. its defaults as a TOML table.
    pub fn defaults(self) -> Table {
        fn table<T: Serialize>(v: T) -> Table {
            Table::try_from(v).expect("defaults serialize to a table")
        }
        match self {
            ScenarioId::NsSc => table(NsScParams::default()),
            ScenarioId::NsPusc => table(NsPuscParams::default()),
            ScenarioId::NsDispersive => table(NsDispersiveParams::default()),
            ScenarioId::Cz => table(CzParams::default()),
            ScenarioId::CatchRelease => table(CatchReleaseParams::default()),
            ScenarioId::Sweep => table(SweepParams::default()),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownScenario(s.to_string()))
    }
}

/// On-disk form of a config file. `scenario` is optional so that one file can
/// be reused with `run <scenario>`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    params: Table,
}

/// A validated scenario configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    /// Fully resolved parameters: defaults with file values and overrides
    /// merged in.
    pub params: Table,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioId) -> Self {
        Self { scenario, params: scenario.defaults(), out: None, seed: 0 }
    }

    /// Builds a config from an optional file and `key=value` overrides. The
    /// scenario named on the command line wins over the file's.
    pub fn load(
        scenario: ScenarioId,
        file: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::new(scenario);
        if let Some(path) = file {
            let read_err = |message: String| ConfigError::Read { path: path.to_path_buf(), message };
            let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
            let parsed: ConfigFile = toml::from_str(&text).map_err(|e| read_err(e.to_string()))?;
            if let Some(s) = &parsed.scenario {
                let id: ScenarioId = s.parse()?;
                if id != scenario {
                    log::warn!("config file is for scenario {id}, running {scenario}");
                }
            }
            cfg.seed = parsed.seed.unwrap_or(0);
            cfg.out = parsed.out;
            merge_table(scenario, &mut cfg.params, parsed.params, "")?;
        }
        for o in overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `a.b.c=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Malformed(assignment.to_string()))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(ConfigError::Malformed(assignment.to_string()));
        }
        let value = parse_value(raw.trim());
        let keys: Vec<&str> = path.split('.').collect();
        let mut slot = &mut self.params;
        for (i, key) in keys.iter().enumerate() {
            let invalid = || ConfigError::InvalidPath { scenario: self.scenario, path: path.to_string() };
            let free = slot.is_empty();
            if i + 1 == keys.len() {
                match slot.get_mut(*key) {
                    Some(Value::Table(old)) if !old.is_empty() => match value {
                        Value::Table(new) => merge_table(self.scenario, old, new, path)?,
                        other => {
                            return Err(ConfigError::TypeMismatch {
                                path: path.to_string(),
                                expected: "a table",
                                found: type_name(&other),
                            })
                        }
                    },
                    Some(old) => *old = checked(path, old, value)?,
                    None if free => {
                        slot.insert(key.to_string(), value);
                    }
                    None => return Err(invalid()),
                }
                break;
            }
            if free && !slot.contains_key(*key) {
                slot.insert(key.to_string(), Value::Table(Table::new()));
            }
            slot = match slot.get_mut(*key) {
                Some(Value::Table(t)) => t,
                _ => return Err(invalid()),
            };
        }
        Ok(())
    }

    /// Deserializes the resolved parameters into the scenario's typed form.
    pub fn typed<T: DeserializeOwned>(&self) -> Result<T, ConfigError> {
        Value::Table(self.params.clone())
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Schema { scenario: self.scenario, message: e.message().to_string() })
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match self.scenario {
            ScenarioId::NsSc => self.typed::<NsScParams>().map(drop),
            ScenarioId::NsPusc => self.typed::<NsPuscParams>().map(drop),
            ScenarioId::NsDispersive => self.typed::<NsDispersiveParams>().map(drop),
            ScenarioId::Cz => self.typed::<CzParams>().map(drop),
            ScenarioId::CatchRelease => self.typed::<CatchReleaseParams>().map(drop),
            ScenarioId::Sweep => self.typed::<SweepParams>().map(drop),
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string so that
/// `--set regime=pusc` needs no quotes.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

/// `new` coerced to the type of `old`, or a type error. Integers widen to
/// floats; an empty array or table in the schema accepts anything.
fn checked(path: &str, old: &Value, new: Value) -> Result<Value, ConfigError> {
    let mismatch = |new: &Value| ConfigError::TypeMismatch {
        path: path.to_string(),
        expected: type_name(old),
        found: type_name(new),
    };
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(a), Value::Array(b)) => {
            let Some(first) = a.first() else { return Ok(Value::Array(b)) };
            let items = b
                .into_iter()
                .enumerate()
                .map(|(i, v)| checked(&format!("{path}[{i}]"), first, v))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Value::Array(items))
        }
        (Value::Table(a), Value::Table(b)) if a.is_empty() => Ok(Value::Table(b)),
        (Value::Table(_), Value::Table(_)) => unreachable!("tables are merged key by key"),
        (o, n) if std::mem::discriminant(o) == std::mem::discriminant(&n) => Ok(n),
        (_, n) => Err(mismatch(&n)),
    }
}

fn merge_table(scenario: ScenarioId, base: &mut Table, incoming: Table, prefix: &str) -> Result<(), ConfigError> {
    let free = base.is_empty();
    for (key, value) in incoming {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(inner)), Value::Table(t)) if !inner.is_empty() => {
                merge_table(scenario, inner, t, &path)?;
            }
            (Some(old), v) => *old = checked(&path, old, v)?,
            (None, v) if free => {
                base.insert(key, v);
            }
            (None, _) => return Err(ConfigError::InvalidPath { scenario, path }),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_type_checked() {
        let mut cfg = ScenarioConfig::new(ScenarioId::NsSc);
        cfg.set("noise.kappa.value=0.1").unwrap();
        cfg.set("noise.kappa.value=1").unwrap();
        assert_eq!(cfg.params["noise"]["kappa"]["value"], Value::Float(1.0));
        assert!(matches!(cfg.set("noise.kappa.value=fast"), Err(ConfigError::TypeMismatch { .. })));
        assert!(matches!(cfg.set("noise.kapa.value=0.1"), Err(ConfigError::InvalidPath { .. })));
        assert!(matches!(cfg.set("noise"), Err(ConfigError::Malformed(_))));
        cfg.set("noise.kappa={ unit = \"per_ns\", value = 2 }").unwrap();
        assert_eq!(cfg.params["noise"]["kappa"]["value"], Value::Float(2.0));
        assert!(matches!(cfg.set("noise.kappa=3"), Err(ConfigError::TypeMismatch { .. })));
        assert!(matches!(cfg.set("noise.kappa={ speed = 1 }"), Err(ConfigError::InvalidPath { .. })));
    }

    #[test]
    fn enum_values_are_checked_on_load() {
        let err = ScenarioConfig::load(ScenarioId::Cz, None, &["regime=strong".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { .. }), "{err}");
        ScenarioConfig::load(ScenarioId::Cz, None, &["regime=pusc".into()]).unwrap();
    }

    #[test]
    fn every_scenario_has_valid_defaults() {
        for id in ScenarioId::ALL {
            ScenarioConfig::load(id, None, &[]).unwrap();
            assert_eq!(id.as_str().parse::<ScenarioId>().unwrap(), id);
        }
        assert!("ns".parse::<ScenarioId>().is_err());
    }
}
