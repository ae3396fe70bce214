//! Objective metrics for generated singing: vocalness, average pitch and
//! chord/melody matchness, with a built-in YIN pitch tracker and skyline
//! melody extraction.

mod pitch;

pub use pitch::{
    frame_rms_db, hz_to_midi, track_pitch, PitchTrack, FRAME, PITCH_MAX_HZ, PITCH_MIN_HZ,
    WINDOW, YIN_THRESHOLD,
};

use crate::chordgen::{matchness, ChordGenModel, ChordToken, TimeSignature};
use crate::error::{Error, Result};
use crate::features::{frames_per_beat, AudioClip, PianoRoll};
use crate::numerics::Array2;

/// Frames at or below this level count as silent.
pub const SILENCE_DB: f64 = -60.0;

/// Header of the batch evaluation CSV.
pub const EVAL_CSV_HEADER: &str = "clip_id,avg_pitch,vocalness,matchness";

/// `true` for frames whose RMS exceeds −60 dBFS.
pub fn nonsilent_mask(clip: &AudioClip) -> Vec<bool> {
    frame_rms_db(&clip.to_pipeline_rate())
        .into_iter()
        .map(|db| db > SILENCE_DB)
        .collect()
}

/// Fraction of non-silent frames with activation ≥ 0.5 and pitch > 0.
pub fn vocalness(track: &PitchTrack, nonsilent: &[bool]) -> Result<f64> {
    if nonsilent.len() != track.len() {
        return Err(Error::Shape(format!(
            "mask has {} frames, track has {}",
            nonsilent.len(),
            track.len()
        )));
    }
    let mut considered = 0usize;
    let mut vocal = 0usize;
    for t in 0..track.len() {
        if nonsilent[t] {
            considered += 1;
            if track.activation[t] >= 0.5 && track.pitch_hz[t] > 0.0 {
                vocal += 1;
            }
        }
    }
    if considered == 0 {
        return Err(Error::Undefined("vocalness of a clip with no non-silent frames".into()));
    }
    Ok(vocal as f64 / considered as f64)
}

/// Mean pitch over voiced frames with confidence above 0.5.
pub fn average_pitch(track: &PitchTrack) -> Result<f64> {
    let qualifying: Vec<f64> = track
        .pitch_hz
        .iter()
        .zip(&track.confidence)
        .filter(|&(&p, &c)| c > 0.5 && p > 0.0)
        .map(|(&p, _)| p)
        .collect();
    if qualifying.is_empty() {
        return Err(Error::Undefined("average pitch of a clip with no confident frames".into()));
    }
    Ok(qualifying.iter().sum::<f64>() / qualifying.len() as f64)
}

/// Highest sounding MIDI note per frame, `None` for rests.
pub fn skyline(roll: &PianoRoll) -> Vec<Option<u8>> {
    (0..roll.frames())
        .map(|t| roll.active_notes(t).last().copied())
        .collect()
}

/// Quarter-note melody chroma (`12 × beats`) from per-frame notes: each
/// beat's column counts the pitch classes of its frames.
pub fn beat_chroma(notes: &[Option<u8>], bpm: f64, beats: usize) -> Result<Array2> {
    if !(bpm > 0.0) {
        return Err(Error::InvalidArgument("tempo must be positive".into()));
    }
    let fpb = frames_per_beat(bpm);
    let mut out = Array2::zeros(12, beats);
    for (t, note) in notes.iter().enumerate() {
        let beat = (t as f64 / fpb) as usize;
        if beat >= beats {
            break;
        }
        if let Some(n) = note {
            out[(*n as usize % 12, beat)] += 1.0;
        }
    }
    Ok(out)
}

/// Matchness of a sung voice against a chord per quarter-note beat:
/// pitch-track the voice, pool confident notes into beat chroma, then score
/// the chords with the harmonisation model.
pub fn audio_matchness(
    voice: &AudioClip,
    chords: &[ChordToken],
    bpm: f64,
    ts: TimeSignature,
    mh: &ChordGenModel,
) -> Result<f64> {
    let notes = track_pitch(voice).confident_notes();
    let chroma = beat_chroma(&notes, bpm, chords.len())?;
    matchness(mh, &chroma, chords, ts)
}

/// One row of the evaluation CSV; absent metrics print as empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub clip_id: String,
    pub avg_pitch: Option<f64>,
    pub vocalness: Option<f64>,
    pub matchness: Option<f64>,
}

impl EvalRow {
    pub fn fields(&self) -> [String; 4] {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.clip_id.clone(),
            cell(self.avg_pitch),
            cell(self.vocalness),
            cell(self.matchness),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{piano_roll_from_notes, sine, SAMPLE_RATE};

    #[test]
    fn vocalness_fixture_is_one_third() {
        let track = PitchTrack {
            pitch_hz: vec![200.0, 300.0, 0.0],
            confidence: vec![0.9; 3],
            activation: vec![0.6, 0.4, 0.9],
        };
        assert_eq!(vocalness(&track, &[true; 3]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn vocalness_ignores_silent_frames_and_rejects_all_silent() {
        let track = PitchTrack {
            pitch_hz: vec![200.0, 0.0],
            confidence: vec![0.9, 0.0],
            activation: vec![0.9, 0.0],
        };
        assert_eq!(vocalness(&track, &[true, false]).unwrap(), 1.0);
        assert!(matches!(vocalness(&track, &[false, false]), Err(Error::Undefined(_))));
        assert!(vocalness(&track, &[true]).is_err());
    }

    #[test]
    fn average_pitch_fixture_is_220() {
        let track = PitchTrack {
            pitch_hz: vec![220.0, 440.0],
            confidence: vec![0.9, 0.3],
            activation: vec![1.0, 1.0],
        };
        assert_eq!(average_pitch(&track).unwrap(), 220.0);
        let flat = PitchTrack {
            pitch_hz: vec![330.0; 5],
            confidence: vec![0.99; 5],
            activation: vec![1.0; 5],
        };
        assert_eq!(average_pitch(&flat).unwrap(), 330.0);
        assert!(average_pitch(&PitchTrack::default()).is_err());
    }

    #[test]
    fn skyline_takes_highest_note() {
        let roll = piano_roll_from_notes(&[(60, 0, 2), (64, 1, 2), (67, 1, 2), (72, 3, 4)], 4).unwrap();
        assert_eq!(skyline(&roll), vec![Some(60), Some(67), None, Some(72)]);
    }

    #[test]
    fn silent_clip_mask_is_all_false() {
        let mask = nonsilent_mask(&AudioClip::new(vec![0.0; 4096], SAMPLE_RATE));
        assert_eq!(mask.len(), 8);
        assert!(mask.iter().all(|&m| !m));
        assert!(nonsilent_mask(&sine(200.0, 0.1, 0.2, SAMPLE_RATE)).iter().all(|&m| m));
    }

    #[test]
    fn beat_chroma_pools_frames() {
        // 60 bpm: ~43 frames per beat.
        let notes: Vec<Option<u8>> = (0..100).map(|t| if t < 43 { Some(60) } else { Some(67) }).collect();
        let c = beat_chroma(&notes, 60.0, 2).unwrap();
        assert_eq!(c[(0, 0)], 43.0);
        assert_eq!(c[(7, 1)], 43.0);
    }
}
