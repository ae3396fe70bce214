use crate::chordgen::ChordToken;
use crate::error::{Error, Result};
use crate::g3began::{CondMode, CHORD_COND_DIM, PIANO_ROLL_DIM};
use crate::numerics::{Array2, FeatureSeq};

use super::{HOP, SAMPLE_RATE};

/// Lowest piano key (A0); row 0 of a roll.
pub const PIANO_MIDI_LOW: u8 = 21;
/// Highest piano key (C8); row 87 of a roll.
pub const PIANO_MIDI_HIGH: u8 = 108;

/// Binary `88 × T` note activity at the mel frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct PianoRoll(FeatureSeq);

impl PianoRoll {
    pub fn new(roll: FeatureSeq) -> Result<Self> {
        if roll.rows() != PIANO_ROLL_DIM {
            return Err(Error::Shape(format!(
                "piano roll needs {PIANO_ROLL_DIM} rows, got {}",
                roll.rows()
            )));
        }
        if roll.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("piano roll entries must be 0 or 1".into()));
        }
        Ok(Self(roll))
    }

    pub fn frames(&self) -> usize {
        self.0.cols()
    }

    pub fn as_array(&self) -> &FeatureSeq {
        &self.0
    }

    pub fn into_array(self) -> FeatureSeq {
        self.0
    }

    pub fn is_active(&self, midi: u8, frame: usize) -> bool {
        (PIANO_MIDI_LOW..=PIANO_MIDI_HIGH).contains(&midi)
            && self.0[((midi - PIANO_MIDI_LOW) as usize, frame)] > 0.5
    }

    /// MIDI pitches sounding at `frame`, ascending.
    pub fn active_notes(&self, frame: usize) -> Vec<u8> {
        (0..PIANO_ROLL_DIM)
            .filter(|&r| self.0[(r, frame)] > 0.5)
            .map(|r| PIANO_MIDI_LOW + r as u8)
            .collect()
    }
}

/// Builds a roll from `(midi, start_frame, end_frame)` notes, end exclusive.
pub fn piano_roll_from_notes(notes: &[(u8, usize, usize)], frames: usize) -> Result<PianoRoll> {
    let mut roll = Array2::zeros(PIANO_ROLL_DIM, frames);
    for &(midi, start, end) in notes {
        if !(PIANO_MIDI_LOW..=PIANO_MIDI_HIGH).contains(&midi) {
            return Err(Error::InvalidArgument(format!("MIDI {midi} is not a piano key")));
        }
        for t in start..end.min(frames) {
            roll[((midi - PIANO_MIDI_LOW) as usize, t)] = 1.0;
        }
    }
    PianoRoll::new(roll)
}

/// Mel frames per quarter-note beat at `bpm`.
pub fn frames_per_beat(bpm: f64) -> f64 {
    60.0 / bpm * SAMPLE_RATE as f64 / HOP as f64
}

/// Expands per-beat chords to `frames` mel frames; frames past the last beat
/// keep the last chord.
pub fn chords_per_frame(beats: &[ChordToken], bpm: f64, frames: usize) -> Result<Vec<ChordToken>> {
    if beats.is_empty() {
        return Err(Error::InvalidArgument("empty chord sequence".into()));
    }
    if !(bpm > 0.0) {
        return Err(Error::InvalidArgument("tempo must be positive".into()));
    }
    let fpb = frames_per_beat(bpm);
    Ok((0..frames)
        .map(|t| beats[((t as f64 / fpb) as usize).min(beats.len() - 1)])
        .collect())
}

/// `24 × T`: rows 0–11 are the chord's pitch classes, rows 12–23 its root.
pub fn chord_condition(per_frame: &[ChordToken]) -> FeatureSeq {
    let mut out = Array2::zeros(CHORD_COND_DIM, per_frame.len());
    for (t, chord) in per_frame.iter().enumerate() {
        for (pc, &on) in chord.chroma().iter().enumerate() {
            if on {
                out[(pc, t)] = 1.0;
            }
        }
        out[(12 + chord.root(), t)] = 1.0;
    }
    out
}

/// Where a condition comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionSource {
    None,
    PianoRoll(PianoRoll),
    /// One chord per mel frame.
    Chords(Vec<ChordToken>),
}

/// Renders the condition matrix for `mode`, checking it spans `frames`.
pub fn build_condition(
    mode: CondMode,
    source: &ConditionSource,
    frames: usize,
) -> Result<Option<FeatureSeq>> {
    let check = |got: usize| {
        if got != frames {
            Err(Error::Condition(format!(
                "condition has {got} frames, expected {frames}"
            )))
        } else {
            Ok(())
        }
    };
    match (mode, source) {
        (CondMode::None, ConditionSource::None) => Ok(None),
        (CondMode::PianoRoll88, ConditionSource::PianoRoll(roll)) => {
            check(roll.frames())?;
            Ok(Some(roll.as_array().clone()))
        }
        (CondMode::Chord, ConditionSource::Chords(chords)) => {
            check(chords.len())?;
            Ok(Some(chord_condition(chords)))
        }
        (mode, _) => Err(Error::Condition(format!(
            "source does not match the {} singer",
            mode.name()
        ))),
    }
}
