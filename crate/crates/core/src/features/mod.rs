//! Audio ingestion, mel features, sub-clip segmentation, conditions and
//! Griffin-Lim preview synthesis.
//!
//! Pinned analysis settings: 22050 Hz, 2048-point FFT, hop 512, periodic Hann
//! window, 80 Slaney mel bands over 0–11025 Hz, `ln(1e-5 + power)`.

mod audio;
mod condition;
mod griffin_lim;
pub mod mel;
mod stft;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array2, FeatureSeq};

pub use audio::{read_wav, resample, sine, write_wav, AudioClip};
pub use condition::{
    build_condition, chord_condition, chords_per_frame, frames_per_beat, piano_roll_from_notes,
    ConditionSource, PianoRoll, PIANO_MIDI_HIGH, PIANO_MIDI_LOW,
};
pub use griffin_lim::{griffin_lim, mel_to_linear_power};
pub use mel::MelFilterbank;
pub use stft::{hann, Stft};

pub const SAMPLE_RATE: u32 = 22_050;
pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_MELS: usize = 80;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 11_025.0;
pub const LOG_OFFSET: f64 = 1e-5;

/// `ln(1e-5)`: the log-mel value of a silent band.
pub fn log_floor() -> f64 {
    LOG_OFFSET.ln()
}

/// Frames produced for `samples` samples at the pipeline hop.
pub fn frames_for_samples(samples: usize) -> usize {
    samples.div_ceil(HOP)
}

/// Frames covering `seconds` of audio, rounded up.
pub fn frames_for_seconds(seconds: f64) -> usize {
    frames_for_samples((seconds * SAMPLE_RATE as f64).round() as usize)
}

pub fn mel_filterbank() -> MelFilterbank {
    MelFilterbank::new(SAMPLE_RATE as f64, N_FFT, N_MELS, F_MIN, F_MAX)
}

/// Log-mel range used to map features into `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelNorm {
    pub min: f64,
    pub max: f64,
}

impl Default for MelNorm {
    /// Floor of silence up to the level of a full-scale tone.
    fn default() -> Self {
        Self {
            min: log_floor(),
            max: 12.0,
        }
    }
}

impl MelNorm {
    /// Min and max over a corpus of raw log-mel matrices.
    pub fn fit<'a>(log_mels: impl IntoIterator<Item = &'a Array2>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in log_mels {
            for &v in m.data() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        if hi - lo < 1e-6 {
            hi = lo + 1.0;
        }
        Ok(Self { min: lo, max: hi })
    }

    pub fn normalize(&self, log_mel: &Array2) -> Array2 {
        let span = self.max - self.min;
        log_mel.map(|v| (2.0 * (v - self.min) / span - 1.0).clamp(-1.0, 1.0))
    }

    pub fn denormalize(&self, normalized: &Array2) -> Array2 {
        let span = self.max - self.min;
        normalized.map(|v| (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * span + self.min)
    }
}

/// Normalised mel features with the range they were normalised by.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub features: FeatureSeq,
    pub norm: MelNorm,
}

impl MelSpec {
    pub fn frames(&self) -> usize {
        self.features.cols()
    }

    pub fn log_mel(&self) -> Array2 {
        self.norm.denormalize(&self.features)
    }
}

/// Raw `ln(1e-5 + mel power)`, `80 × ceil(len / 512)`.
pub fn log_mel(clip: &AudioClip) -> Result<Array2> {
    if clip.samples.is_empty() {
        return Err(Error::Audio("empty audio".into()));
    }
    let clip = clip.to_pipeline_rate();
    let stft = Stft::new(N_FFT, HOP);
    let fb = mel_filterbank();
    let power = stft.power(&clip.samples);
    let mut out = Array2::zeros(N_MELS, power.len());
    for (t, frame) in power.iter().enumerate() {
        for (b, e) in fb.apply(frame).into_iter().enumerate() {
            out[(b, t)] = (LOG_OFFSET + e).ln();
        }
    }
    Ok(out)
}

/// Normalised mel spectrogram of `clip`.
pub fn melspec(clip: &AudioClip, norm: &MelNorm) -> Result<MelSpec> {
    Ok(MelSpec {
        features: norm.normalize(&log_mel(clip)?),
        norm: *norm,
    })
}

/// Frame-level voice activity from energy.
///
/// A frame's energy is `ln(1e-5 + mean band power)`, recovered from the
/// denormalised log-mel. It is active when that energy lies more than
/// `margin` natural-log units above the silence floor `ln(1e-5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityRule {
    pub margin: f64,
}

impl Default for ActivityRule {
    fn default() -> Self {
        Self { margin: 4.0 }
    }
}

impl ActivityRule {
    pub fn active_frames(&self, mel: &MelSpec) -> Vec<bool> {
        let log = mel.log_mel();
        let threshold = log_floor() + self.margin;
        (0..log.cols())
            .map(|t| {
                let power = (0..log.rows())
                    .map(|r| (log[(r, t)].exp() - LOG_OFFSET).max(0.0))
                    .sum::<f64>()
                    / log.rows() as f64;
                (LOG_OFFSET + power).ln() > threshold
            })
            .collect()
    }
}

/// Outcome of segmenting one track.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// First frame of the window in the source track.
    pub start: usize,
    pub mel: MelSpec,
    pub active_ratio: f64,
    pub kept: bool,
}

/// Frames per sub-clip: `floor(clip_seconds · 22050 / 512)`, so three
/// windows fit in 30 s of audio.
pub fn window_frames(clip_seconds: f64) -> usize {
    (clip_seconds * SAMPLE_RATE as f64 / HOP as f64).floor() as usize
}

/// All full windows in order, each marked kept or dropped. A window is
/// dropped when its fraction of active frames is strictly below
/// `vocal_ratio_min`; the trailing partial window is discarded.
pub fn segment_all(
    track: &MelSpec,
    clip_seconds: f64,
    vocal_ratio_min: f64,
    rule: &ActivityRule,
) -> Result<Vec<Segment>> {
    if !(clip_seconds > 0.0) {
        return Err(Error::InvalidArgument("clip length must be positive".into()));
    }
    let len = window_frames(clip_seconds);
    if len == 0 {
        return Err(Error::InvalidArgument("clip shorter than one frame".into()));
    }
    let active = rule.active_frames(track);
    let count = track.frames() / len;
    Ok((0..count)
        .map(|i| {
            let start = i * len;
            let n_active = active[start..start + len].iter().filter(|&&a| a).count();
            let ratio = n_active as f64 / len as f64;
            Segment {
                start,
                mel: MelSpec {
                    features: track.features.slice_cols(start, len),
                    norm: track.norm,
                },
                active_ratio: ratio,
                kept: ratio >= vocal_ratio_min,
            }
        })
        .collect())
}

/// Kept sub-clips of `track` (see [`segment_all`]).
pub fn segment(
    track: &MelSpec,
    clip_seconds: f64,
    vocal_ratio_min: f64,
    rule: &ActivityRule,
) -> Result<Vec<MelSpec>> {
    Ok(segment_all(track, clip_seconds, vocal_ratio_min, rule)?
        .into_iter()
        .filter(|s| s.kept)
        .map(|s| s.mel)
        .collect())
}
