//! Experiment configuration: a TOML document with one section per phase.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{HtConfig, ScheduleConfig};
use crate::data::{load_dataset, synth_generate, DataFormat, Dataset, Partition, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::meta::{MetaConfig, Mode};
use crate::model::ArchConfig;
use crate::pretrain::PretrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Load from disk instead of generating.
    pub path: Option<PathBuf>,
    pub format: DataFormat,
    /// Samples every class must have when loading.
    pub min_per_class: usize,
    pub synth: SynthConfig,
    /// [`SplitSpec::quarters`] of the dataset when unset.
    pub split: Option<SplitSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: DataFormat::TensorDir,
            min_per_class: 16,
            synth: SynthConfig { noise: 0.6, ..Default::default() },
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub modes: Vec<Mode>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { modes: vec![Mode::Ss, Mode::FtFull, Mode::UpdateTheta] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
    pub meta: MetaConfig,
    pub ht: HtConfig,
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

/// Loaded data with its class partitions.
pub struct Prepared {
    pub dataset: Dataset,
    pub split: SplitSpec,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ExperimentConfig {
    /// Parses `text`; errors carry the TOML line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or defaults when `None`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let label = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {}", label, e)))?;
        let mut doc: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.meta.validate()?;
        self.ht.validate()?;
        if self.eval.tasks < 2 {
            return Err(Error::Config("eval.tasks must be at least 2".into()));
        }
        Ok(())
    }

    /// The config as TOML; parsing it back gives an equal config.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let d = &self.dataset;
        let dataset = match &d.path {
            Some(p) => load_dataset(p, d.format, d.min_per_class)?,
            None => synth_generate(&d.synth, self.seed)?,
        };
        let split = d.split.clone().unwrap_or_else(|| SplitSpec::quarters(dataset.num_classes()));
        split.validate(&dataset)?;
        let train = split.classes(&dataset, Partition::Train);
        let val = split.classes(&dataset, Partition::Val);
        let test = split.classes(&dataset, Partition::Test);
        Ok(Prepared { dataset, split, train, val, test })
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {}", raw)) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{}' is not key=value", assignment)))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override '{}' has an empty key segment", assignment)));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{}': '{}' is not a table", assignment, p)))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = ExperimentConfig::from_toml("[meta]\nway = 5\nshots = 1\n").unwrap_err().to_string();
        assert!(err.contains("shots") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn override_reaches_resolved_dump() {
        let cfg = ExperimentConfig::load(None, &["meta.inner_epochs=5".into(), "meta.mode=ft-full".into()]).unwrap();
        assert_eq!(cfg.meta.inner_epochs, 5);
        assert_eq!(cfg.meta.mode, Mode::FtFull);
        let dump = cfg.resolved().unwrap();
        assert!(dump.contains("inner_epochs = 5"), "{dump}");
        assert_eq!(ExperimentConfig::from_toml(&dump).unwrap(), cfg);
    }

    #[test]
    fn bad_override_value_is_a_config_error() {
        assert!(ExperimentConfig::load(None, &["meta.way=lots".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["meta.way".into()]).is_err());
    }
}
