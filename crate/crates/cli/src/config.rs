//! Experiment configuration: one JSON document, with leaf overrides given as
//! `dotted.path=value`.

use std::path::{Path, PathBuf};

use crowdcause::design::{Criterion, PoolMode};
use crowdcause::expert::{Archetype, CrowdMember, ExpertProfile, Protocol};
use crowdcause::graph::{load_network, NetworkFile};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One expert, its own posterior or score field.
    Single,
    /// Vote over per-expert graphs.
    ExpertLevel,
    /// Structure search on the response mixture.
    QueryLevel,
}

/// `count` experts sharing an archetype or explicit profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdGroup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<Archetype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ExpertProfile>,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub criterion: Criterion,
    pub stages: Vec<usize>,
    #[serde(default = "fixed_pool")]
    pub pool_mode: PoolMode,
}

fn fixed_pool() -> PoolMode {
    PoolMode::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fixture name (`asia`) or path to a network JSON file.
    #[serde(default = "asia")]
    pub network: String,
    pub crowd: Vec<CrowdGroup>,
    pub protocol: Protocol,
    #[serde(default = "query_level")]
    pub aggregation: Aggregation,
    /// Staged adaptive elicitation; exhaustive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Structure-search restarts for query-level aggregation.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Replicates run concurrently on up to this many threads.
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn asia() -> String {
    "asia".into()
}

fn query_level() -> Aggregation {
    Aggregation::QueryLevel
}

fn default_restarts() -> usize {
    crowdcause::aggregate::DEFAULT_RESTARTS
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parses a config document after applying `overrides` and validates it.
    pub fn from_value(mut doc: Value, overrides: &[(String, Value)]) -> CliResult<Self> {
        for (path, value) in overrides {
            set_path(&mut doc, path, value.clone())?;
        }
        let config: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            let field = if path == "." {
                "<root>".to_string()
            } else {
                path
            };
            CliError::config(field, msg)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, Value)]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("<file>", format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::config("<root>", e))?;
        Self::from_value(doc, overrides)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.replicates == 0 {
            return Err(CliError::config("replicates", "must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(CliError::config("parallelism", "must be at least 1"));
        }
        if self.crowd.is_empty() {
            return Err(CliError::config("crowd", "needs at least one expert group"));
        }
        for (i, g) in self.crowd.iter().enumerate() {
            if g.count == 0 {
                return Err(CliError::config(
                    format!("crowd.{i}.count"),
                    "must be at least 1",
                ));
            }
            match (&g.profile, g.archetype) {
                (Some(p), _) => p
                    .validate()
                    .map_err(|e| CliError::config(format!("crowd.{i}.profile"), e))?,
                (None, Some(_)) => {}
                (None, None) => {
                    return Err(CliError::config(
                        format!("crowd.{i}"),
                        "needs an archetype or a profile",
                    ))
                }
            }
        }
        if self.aggregation == Aggregation::Single && self.members().len() != 1 {
            return Err(CliError::config(
                "aggregation",
                "`single` needs exactly one expert",
            ));
        }
        if let Some(d) = &self.design {
            if d.stages.is_empty() {
                return Err(CliError::config(
                    "design.stages",
                    "needs at least one stage",
                ));
            }
            if let Some(i) = d.stages.iter().position(|&k| k == 0) {
                return Err(CliError::config(
                    format!("design.stages.{i}"),
                    "stage budgets must be positive",
                ));
            }
        }
        self.network_file()?;
        Ok(())
    }

    pub fn network_file(&self) -> CliResult<NetworkFile> {
        load_network(&self.network).map_err(|e| CliError::config("network", e))
    }

    /// Expanded crowd with stable ids and per-member seeds.
    pub fn members(&self) -> Vec<CrowdMember> {
        let mut out = Vec::new();
        for (gi, g) in self.crowd.iter().enumerate() {
            let prefix = g.prefix.clone().unwrap_or_else(|| format!("g{gi}-"));
            for k in 0..g.count {
                out.push(CrowdMember {
                    expert_id: format!("{prefix}{k:02}"),
                    archetype: g.archetype,
                    profile: g.profile,
                    seed: out.len() as u64,
                });
            }
        }
        out
    }
}

/// Sets `path` (dot-separated; numeric segments index arrays) in `doc`,
/// creating objects along the way.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(path, "empty path segment"));
    }
    let mut cur = doc;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| {
                    CliError::config(path, format!("`{part}` is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| {
                    CliError::config(path, format!("index {i} out of range ({len} items)"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::config(
                    path,
                    format!("`{part}` is inside a scalar"),
                ))
            }
        };
    }
    Ok(())
}

/// Parses `key=value`; the value is read as JSON when possible, otherwise as
/// a plain string.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(s, "override must look like path=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
