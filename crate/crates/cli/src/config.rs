//! The TOML run configuration: every pipeline default in one file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use g3singer::chordgen::ChordTrainConfig;
use g3singer::trainer::TrainConfig;

use crate::failure::{CmdResult, Failure};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub chordgen: ChordRunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Manifest written by `prepare`, relative to the config file.
    pub manifest: PathBuf,
    pub clip_seconds: f64,
    /// Windows with a smaller fraction of active frames are dropped.
    pub vocal_ratio_min: f64,
    /// Activity threshold above the silence floor, natural-log units.
    pub activity_margin: f64,
    /// Fit the log-mel range on the corpus instead of the fixed default.
    pub fit_norm: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("prepared/manifest.json"),
            clip_seconds: 10.0,
            vocal_ratio_min: 0.4,
            activity_margin: 4.0,
            fit_norm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub seconds: f64,
    pub griffin_lim_iters: usize,
    /// Sampling temperature for chord progressions in solo mode.
    pub chord_temperature: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seconds: 20.0,
            griffin_lim_iters: 32,
            chord_temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChordRunConfig {
    pub epochs: usize,
    /// Add all twelve transpositions of every lead sheet.
    pub augment: bool,
    pub train: ChordTrainConfig,
}

impl Default for ChordRunConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            augment: true,
            train: ChordTrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CmdResult<Self> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("config: {e}")))
    }

    /// Reads a config; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if config.data.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                config.data.manifest = dir.join(&config.data.manifest);
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> CmdResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> CmdResult {
        self.train.validate()?;
        self.chordgen.train.validate()?;
        let d = &self.data;
        if !(d.clip_seconds > 0.0) || !(0.0..=1.0).contains(&d.vocal_ratio_min) {
            return Err(Failure::usage(
                "data.clip_seconds must be positive and data.vocal_ratio_min in [0, 1]",
            ));
        }
        if self.generate.griffin_lim_iters == 0 || !(self.generate.seconds > 0.0) {
            return Err(Failure::usage(
                "generate.griffin_lim_iters and generate.seconds must be positive",
            ));
        }
        Ok(())
    }
}
