//! The JSON run configuration and flag merging.
//!
//! Precedence is flag > config file > default. Relative paths in a config
//! file are resolved against the directory holding that file.

use std::fs;
use std::path::{Path, PathBuf};

use jplrdl_core::{CorruptionKind, Error, LoadOptions, PlantedSubspaces, TrainConfig};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    pub kind: Option<CorruptionKind>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_matrix: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_matrix: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Seed for `corrupt` and `split`; training reads `train.seed`.
    pub seed: Option<u64>,
    pub image_shape: Option<(usize, usize)>,
    pub value_max: Option<f64>,
    pub per_class_train: Option<usize>,
    pub corruption: Option<CorruptionSection>,
    /// Generate planted training data instead of reading `train_matrix`.
    pub synthetic: Option<PlantedSubspaces>,
    /// Partial [`TrainConfig`]; missing keys take their defaults.
    pub train: Map<String, Value>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_matrix,
            &mut cfg.train_labels,
            &mut cfg.test_matrix,
            &mut cfg.test_labels,
            &mut cfg.model,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_options(
        &self,
        image_shape: Option<(usize, usize)>,
        value_max: Option<f64>,
    ) -> LoadOptions {
        LoadOptions {
            image_shape: image_shape.or(self.image_shape),
            value_max: value_max.or(self.value_max),
        }
    }

    /// The training configuration after `--set` overrides and `--seed`.
    pub fn train_config(
        &self,
        sets: &[(String, Value)],
        seed: Option<u64>,
    ) -> Result<TrainConfig, CliError> {
        let mut doc = self.train.clone();
        for (k, v) in sets {
            doc.insert(k.clone(), v.clone());
        }
        if let Some(s) = seed {
            doc.insert("seed".into(), Value::from(s));
        }
        serde_json::from_value(Value::Object(doc))
            .map_err(|e| CliError::Usage(format!("training config: {e}")))
    }
}

/// `KEY=VALUE`, with the value read as JSON when it parses and as a string otherwise.
pub fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), v))
}

/// `HxW`, e.g. `20x20`.
pub fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let h = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in {s:?}"))?;
    let w = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}
