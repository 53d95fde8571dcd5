use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, Preset};
use crate::error::{Error, Result};
use crate::i2g::I2GConfig;
use crate::nn::{ModelConfig, TrainConfig};

/// Prefix of environment overrides: `PCL_TRAIN__LAMBDA=0` sets
/// `train.lambda`, `PCL_SEED=3` sets the top-level seed.
pub const ENV_PREFIX: &str = "PCL_";

/// Every knob of a run, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    /// Corpus manifest (JSON lines); relative to the config file.
    pub manifest: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub i2g: I2GConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::default(),
            manifest: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            i2g: I2GConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut t = table;
    for s in sections {
        let entry = t.entry(s.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {ENV_PREFIX}{key}: {s} is not a section")))?;
    }
    t.insert(last.clone(), parse_value(raw));
    Ok(())
}

/// Recursively overlays `top` on `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `(KEY, value)` overrides (keys without the
    /// prefix) and validates.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut full = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut full, table);
        let cfg: RunConfig = toml::Value::Table(full).try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies `PCL_*` variables
    /// from the process environment. Relative paths resolve against the
    /// config file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let overrides = env_overrides(std::env::vars());
        let Some(path) = path else {
            return Self::from_toml("", &overrides);
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.manifest = cfg.manifest.map(|m| if m.is_absolute() { m } else { base.join(m) });
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.i2g.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest configured (set `manifest` or PCL_MANIFEST)".into()))
    }
}

/// `PCL_*` pairs from an environment listing, prefix stripped.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_string(), v)))
        .collect();
    out.sort();
    out
}
