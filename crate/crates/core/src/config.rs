//! JSON run configuration with strict keys and dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::distill::TrainConfig;
use crate::error::{Error, Result};
use crate::grounding::GroundingConfig;
use crate::io::{read_file, write_atomic};
use crate::residual::InterleaveConfig;
use crate::teacher::EncoderConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Sizes of the generated synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub videos: usize,
    pub frames: usize,
    pub grounding_videos: usize,
    /// Query segments per grounding video.
    pub segments: usize,
    pub frames_per_segment: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            videos: 64,
            frames: 8,
            grounding_videos: 8,
            segments: 3,
            frames_per_segment: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batches: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batches: vec![1, 8, 64],
            repetitions: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of data generation.
    pub seed: u64,
    /// Worker count; `RVT_THREADS` takes precedence.
    pub threads: Option<usize>,
    pub encoder: EncoderConfig,
    pub interleave: InterleaveConfig,
    pub train: TrainConfig,
    pub grounding: GroundingConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            encoder: EncoderConfig::default(),
            interleave: InterleaveConfig::default(),
            train: TrainConfig::default(),
            grounding: GroundingConfig {
                window: 3,
                ..Default::default()
            },
            data: DataConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn config_err(key: &str, e: Error) -> Error {
    let message = match e {
        Error::Argument(m) | Error::Dimension(m) => m,
        other => other.to_string(),
    };
    Error::Config {
        key: key.into(),
        message,
    }
}

impl RunConfig {
    /// Parses `doc` after applying `overrides`, reporting the dotted path
    /// of the first offending key.
    pub fn from_value(mut doc: Value, overrides: &[(String, Value)]) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::Config {
                key: "<root>".into(),
                message: "config must be a JSON object".into(),
            });
        }
        for (key, value) in overrides {
            set_path(&mut doc, key, value.clone())?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| Error::Config {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, overrides: &[(String, Value)]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            key: "<root>".into(),
            message: e.to_string(),
        })?;
        Self::from_value(doc, overrides)
    }

    /// Reads `path`, or starts from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        match path {
            Some(p) => {
                let bytes = read_file(p)?;
                let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config {
                    key: "<root>".into(),
                    message: e.to_string(),
                })?;
                Self::from_json(text, overrides)
            }
            None => Self::from_value(Value::Object(Default::default()), overrides),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder
            .validate()
            .map_err(|e| config_err("encoder", e))?;
        self.interleave
            .reduction
            .validate(self.encoder.patch)
            .map_err(|e| config_err("interleave.reduction", e))?;
        self.train.validate().map_err(|e| config_err("train", e))?;
        self.train
            .reduction
            .validate(self.encoder.patch)
            .map_err(|e| config_err("train.reduction", e))?;
        self.grounding
            .validate()
            .map_err(|e| config_err("grounding", e))?;
        if self.threads == Some(0) {
            return Err(config_err("threads", Error::arg("must be at least 1")));
        }
        let d = &self.data;
        if d.videos == 0 || d.frames == 0 || d.grounding_videos == 0 || d.frames_per_segment == 0 {
            return Err(config_err("data", Error::arg("sizes must be positive")));
        }
        if !(1..=4).contains(&d.segments) {
            return Err(config_err("data.segments", Error::arg("must lie in 1..=4")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_atomic(
            dir.as_ref().join(RESOLVED_CONFIG),
            self.to_json().as_bytes(),
        )
    }
}

/// Splits `key=value`; the value is JSON when it parses, a string
/// otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Usage(format!("override `{s}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::Config {
            key: parts[..i].join("."),
            message: "is not an object".into(),
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
