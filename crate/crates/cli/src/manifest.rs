//! The prepared-corpus manifest: kept sub-clips, dropped windows and files
//! that could not be read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use g3singer::container::read_features;
use g3singer::features::MelNorm;
use g3singer::g3began::CondMode;
use g3singer::trainer::Example;

use crate::failure::{CmdResult, Context, Failure};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub cond: CondMode,
    pub norm: MelNorm,
    pub clip_seconds: f64,
    pub vocal_ratio_min: f64,
    pub activity_margin: f64,
    pub clips: Vec<ClipEntry>,
    pub dropped: Vec<DroppedWindow>,
    pub errors: Vec<FileError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub source: String,
    pub start_frame: usize,
    pub frames: usize,
    pub active_ratio: f64,
    /// Feature file paths, relative to the manifest.
    pub mel: PathBuf,
    pub cond: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroppedWindow {
    pub source: String,
    pub start_frame: usize,
    pub active_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileError {
    pub source: String,
    pub message: String,
}

impl Manifest {
    pub fn empty(cond: CondMode, norm: MelNorm) -> Self {
        Self {
            version: MANIFEST_VERSION,
            cond,
            norm,
            clip_seconds: 0.0,
            vocal_ratio_min: 0.0,
            activity_margin: 0.0,
            clips: Vec::new(),
            dropped: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> CmdResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Failure::data(format!(
                "cannot read manifest {}: {e} (run `g3singer prepare` first)",
                path.display()
            ))
        })?;
        let m: Manifest = serde_json::from_slice(&bytes).context(format!("manifest {}", path.display()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Failure::data(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> CmdResult {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").context(format!("writing {}", path.display()))
    }

    /// Loads every kept clip; `dir` is the manifest's directory.
    pub fn examples(&self, dir: &Path) -> CmdResult<Vec<Example>> {
        self.clips
            .iter()
            .map(|c| {
                let mel = read_features(dir.join(&c.mel)).context(format!("clip {}", c.id))?;
                let cond = c
                    .cond
                    .as_ref()
                    .map(|p| read_features(dir.join(p)))
                    .transpose()
                    .context(format!("condition of clip {}", c.id))?;
                if mel.cols() != c.frames {
                    return Err(Failure::data(format!(
                        "clip {} has {} frames, manifest says {}",
                        c.id,
                        mel.cols(),
                        c.frames
                    )));
                }
                Ok(Example { mel, cond })
            })
            .collect()
    }
}
