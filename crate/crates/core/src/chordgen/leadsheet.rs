//! Lead sheets and the 40-dimensional generation condition.
//!
//! JSON schema of a lead sheet:
//!
//! ```text
//! { "key": "C" | "Am" | "F#:min" ...,
//!   "tempo": 120,                  // BPM
//!   "time_signature": "4/4",       // 4/4 3/4 2/4 6/8 12/8 2/2
//!   "beats": [ { "chord": "C:maj", "melody": 64 | null }, ... ] }
//! ```
//!
//! One entry per quarter-note beat; `melody` is a MIDI pitch or a rest.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{parse_pitch_class, ChordToken, PITCH_NAMES};
use crate::error::{Error, Result};

/// Beat-position one-hot width: sub-beat slots per bar.
pub const BEAT_POSITIONS: usize = 12;
pub const NUM_KEYS: usize = 24;
pub const NUM_TEMPOS: usize = 10;
pub const NUM_TIME_SIGNATURES: usize = 6;
/// `24 + 10 + 6`.
pub const GEN_CONDITION_DIM: usize = NUM_KEYS + NUM_TEMPOS + NUM_TIME_SIGNATURES;
/// Tempo bucket centres: 60, 80, …, 240 BPM.
pub const TEMPO_BUCKETS: [f64; NUM_TEMPOS] =
    [60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0, 220.0, 240.0];

/// Tonic pitch class plus mode; index `tonic` for major, `12 + tonic` for minor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Key {
    pub tonic: usize,
    pub minor: bool,
}

impl Key {
    pub fn major(tonic: usize) -> Self {
        Self { tonic: tonic % 12, minor: false }
    }

    pub fn minor(tonic: usize) -> Self {
        Self { tonic: tonic % 12, minor: true }
    }

    pub fn index(self) -> usize {
        self.tonic + if self.minor { 12 } else { 0 }
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self {
            tonic: (self.tonic as i32 + semitones).rem_euclid(12) as usize,
            minor: self.minor,
        }
    }

    /// `C`, `Am`, `C:maj`, `A:min`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (root, minor) = if let Some((r, m)) = s.split_once(':') {
            match m {
                "maj" => (r, false),
                "min" => (r, true),
                _ => return Err(Error::Parse(format!("bad key mode in {s:?}"))),
            }
        } else if let Some(r) = s.strip_suffix('m') {
            (r, true)
        } else {
            (s, false)
        };
        Ok(Self {
            tonic: parse_pitch_class(root)?,
            minor,
        })
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", PITCH_NAMES[self.tonic], if self.minor { "m" } else { "" })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeSignature {
    FourFour,
    ThreeFour,
    TwoFour,
    SixEight,
    TwelveEight,
    TwoTwo,
}

impl TimeSignature {
    pub const ALL: [TimeSignature; NUM_TIME_SIGNATURES] = [
        TimeSignature::FourFour,
        TimeSignature::ThreeFour,
        TimeSignature::TwoFour,
        TimeSignature::SixEight,
        TimeSignature::TwelveEight,
        TimeSignature::TwoTwo,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed")
    }

    /// Quarter-note beats per bar; every value divides 12.
    pub fn beats_per_bar(self) -> usize {
        match self {
            TimeSignature::FourFour | TimeSignature::TwoTwo => 4,
            TimeSignature::ThreeFour | TimeSignature::SixEight => 3,
            TimeSignature::TwoFour => 2,
            TimeSignature::TwelveEight => 6,
        }
    }

    /// Slot in `[0, 12)` of beat `beat` counted from the start of the piece.
    pub fn beat_position(self, beat: usize) -> usize {
        let per_bar = self.beats_per_bar();
        (beat % per_bar) * BEAT_POSITIONS / per_bar
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "4/4" => TimeSignature::FourFour,
            "3/4" => TimeSignature::ThreeFour,
            "2/4" => TimeSignature::TwoFour,
            "6/8" => TimeSignature::SixEight,
            "12/8" => TimeSignature::TwelveEight,
            "2/2" => TimeSignature::TwoTwo,
            other => return Err(Error::Parse(format!("unsupported time signature {other:?}"))),
        })
    }
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeSignature::FourFour => "4/4",
            TimeSignature::ThreeFour => "3/4",
            TimeSignature::TwoFour => "2/4",
            TimeSignature::SixEight => "6/8",
            TimeSignature::TwelveEight => "12/8",
            TimeSignature::TwoTwo => "2/2",
        })
    }
}

/// Index of the tempo bucket nearest `bpm`, clamped to the table.
pub fn tempo_bucket(bpm: f64) -> usize {
    (((bpm - TEMPO_BUCKETS[0]) / 20.0).round().max(0.0) as usize).min(NUM_TEMPOS - 1)
}

/// Key, tempo and metre of a piece.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenCondition {
    pub key: Key,
    pub tempo: f64,
    pub time_signature: TimeSignature,
}

impl GenCondition {
    /// Key one-hot, tempo one-hot and metre one-hot, concatenated.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; GEN_CONDITION_DIM];
        v[self.key.index()] = 1.0;
        v[NUM_KEYS + tempo_bucket(self.tempo)] = 1.0;
        v[NUM_KEYS + NUM_TEMPOS + self.time_signature.index()] = 1.0;
        v
    }
}

/// One quarter-note beat of a lead sheet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beat {
    pub chord: ChordToken,
    /// MIDI pitch, or `None` for a rest.
    pub melody: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeadSheet {
    pub condition: GenCondition,
    pub beats: Vec<Beat>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeat {
    chord: String,
    #[serde(default)]
    melody: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSheet {
    key: String,
    tempo: f64,
    time_signature: String,
    beats: Vec<RawBeat>,
}

impl LeadSheet {
    pub fn chords(&self) -> Vec<ChordToken> {
        self.beats.iter().map(|b| b.chord).collect()
    }

    /// Melody as one pitch-class column per beat (`12 × beats`), zero on rests.
    pub fn melody_chroma(&self) -> crate::numerics::Array2 {
        let mut out = crate::numerics::Array2::zeros(12, self.beats.len());
        for (t, b) in self.beats.iter().enumerate() {
            if let Some(m) = b.melody {
                out[(m as usize % 12, t)] = 1.0;
            }
        }
        out
    }

    /// Every chord root, the melody and the key moved up by `semitones`.
    /// Melody notes stay within MIDI 0–127 by octave folding.
    pub fn transpose(&self, semitones: i32) -> Self {
        let condition = GenCondition {
            key: self.condition.key.transpose(semitones),
            ..self.condition
        };
        let beats = self
            .beats
            .iter()
            .map(|b| Beat {
                chord: b.chord.transpose(semitones),
                melody: b.melody.map(|m| {
                    let mut p = m as i32 + semitones;
                    while p > 127 {
                        p -= 12;
                    }
                    while p < 0 {
                        p += 12;
                    }
                    p as u8
                }),
            })
            .collect();
        Self { condition, beats }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSheet = serde_json::from_str(text)?;
        if raw.beats.is_empty() {
            return Err(Error::Parse("lead sheet has no beats".into()));
        }
        if !(raw.tempo > 0.0) {
            return Err(Error::Parse("tempo must be positive".into()));
        }
        let beats = raw
            .beats
            .iter()
            .map(|b| {
                if b.melody.is_some_and(|m| m > 127) {
                    return Err(Error::Parse("melody pitch above 127".into()));
                }
                Ok(Beat {
                    chord: ChordToken::parse(&b.chord)?,
                    melody: b.melody,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            condition: GenCondition {
                key: Key::parse(&raw.key)?,
                tempo: raw.tempo,
                time_signature: TimeSignature::parse(&raw.time_signature)?,
            },
            beats,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawSheet {
            key: self.condition.key.to_string(),
            tempo: self.condition.tempo,
            time_signature: self.condition.time_signature.to_string(),
            beats: self
                .beats
                .iter()
                .map(|b| RawBeat {
                    chord: b.chord.name(),
                    melody: b.melody,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("plain data serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// All 12 transpositions of every sheet, sheet-major (shift 0 first).
pub fn augment_rotate_keys(corpus: &[LeadSheet]) -> Vec<LeadSheet> {
    corpus
        .iter()
        .flat_map(|s| (0..12).map(move |k| s.transpose(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet() -> LeadSheet {
        LeadSheet::from_json(
            r#"{"key":"Am","tempo":96,"time_signature":"3/4",
                "beats":[{"chord":"A:min","melody":69},{"chord":"A:min","melody":null},
                         {"chord":"E:7","melody":68}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn condition_vector_has_one_bit_per_field() {
        let v = sheet().condition.to_vector();
        assert_eq!(v.len(), 40);
        assert_eq!(v[..24].iter().sum::<f64>(), 1.0);
        assert_eq!(v[24..34].iter().sum::<f64>(), 1.0);
        assert_eq!(v[34..].iter().sum::<f64>(), 1.0);
        assert_eq!(v[12 + 9], 1.0);
        assert_eq!(v[24 + tempo_bucket(96.0)], 1.0);
    }

    #[test]
    fn tempo_buckets_clamp() {
        assert_eq!(tempo_bucket(10.0), 0);
        assert_eq!(tempo_bucket(120.0), 3);
        assert_eq!(tempo_bucket(500.0), 9);
    }

    #[test]
    fn beat_positions_span_the_bar() {
        let p: Vec<usize> = (0..8).map(|b| TimeSignature::FourFour.beat_position(b)).collect();
        assert_eq!(p, vec![0, 3, 6, 9, 0, 3, 6, 9]);
        assert_eq!(TimeSignature::TwelveEight.beat_position(5), 10);
        for ts in TimeSignature::ALL {
            assert_eq!(TimeSignature::parse(&ts.to_string()).unwrap(), ts);
            assert_eq!(BEAT_POSITIONS % ts.beats_per_bar(), 0);
        }
    }

    #[test]
    fn json_round_trip() {
        let s = sheet();
        assert_eq!(LeadSheet::from_json(&s.to_json()).unwrap(), s);
        assert!(LeadSheet::from_json(r#"{"key":"C","tempo":1,"time_signature":"4/4","beats":[],"x":1}"#).is_err());
    }

    #[test]
    fn rotation_multiplies_by_twelve() {
        let corpus = vec![sheet(); 7];
        let aug = augment_rotate_keys(&corpus);
        assert_eq!(aug.len(), 84);
        assert!(aug.iter().all(|s| s.beats.len() == 3));
        assert_eq!(aug[0], corpus[0]);
        assert_eq!(aug[5].condition.key, Key::minor(2));
        assert_eq!(aug[5].beats[0].chord.name(), "D:min");
    }

    #[test]
    fn keys_parse() {
        assert_eq!(Key::parse("F#:min").unwrap(), Key::minor(6));
        assert_eq!(Key::parse("Bb").unwrap(), Key::major(10));
        assert_eq!(Key::parse("Ebm").unwrap().index(), 15);
    }
}
