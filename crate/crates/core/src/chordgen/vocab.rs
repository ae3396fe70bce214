//! The 612-token chord vocabulary: 12 roots × 51 qualities.
//!
//! Token id is `root · 51 + quality`, with roots counted in semitones from C
//! and qualities in the order of the shipped `qualities.txt` table.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ROOTS: usize = 12;
pub const NUM_QUALITIES: usize = 51;
pub const VOCAB_SIZE: usize = NUM_ROOTS * NUM_QUALITIES;

const QUALITY_TABLE: &str = include_str!("qualities.txt");

pub const PITCH_NAMES: [&str; 12] = [
    "C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quality {
    pub name: String,
    pub intervals: Vec<u8>,
}

pub fn qualities() -> &'static [Quality] {
    static TABLE: OnceLock<Vec<Quality>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let table: Vec<Quality> = QUALITY_TABLE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut parts = l.split_whitespace();
                let name = parts.next().expect("quality name").to_string();
                let intervals = parts.map(|p| p.parse().expect("interval")).collect();
                Quality { name, intervals }
            })
            .collect();
        assert_eq!(table.len(), NUM_QUALITIES, "quality table size");
        table
    })
}

/// Chord identifier in `[0, 612)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChordToken(u16);

impl ChordToken {
    pub fn new(id: usize) -> Result<Self> {
        if id >= VOCAB_SIZE {
            return Err(Error::InvalidArgument(format!("chord token {id} out of range")));
        }
        Ok(Self(id as u16))
    }

    pub fn encode(root: usize, quality: usize) -> Result<Self> {
        if root >= NUM_ROOTS || quality >= NUM_QUALITIES {
            return Err(Error::InvalidArgument(format!(
                "root {root} / quality {quality} out of range"
            )));
        }
        Ok(Self((root * NUM_QUALITIES + quality) as u16))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn root(self) -> usize {
        self.id() / NUM_QUALITIES
    }

    pub fn quality(self) -> usize {
        self.id() % NUM_QUALITIES
    }

    pub fn decode(self) -> (usize, usize) {
        (self.root(), self.quality())
    }

    /// Pitch classes sounding in the chord.
    pub fn chroma(self) -> [bool; 12] {
        let mut out = [false; 12];
        for &i in &qualities()[self.quality()].intervals {
            out[(self.root() + i as usize) % 12] = true;
        }
        out
    }

    /// Same quality with the root moved up by `semitones`.
    pub fn transpose(self, semitones: i32) -> Self {
        let root = (self.root() as i32 + semitones).rem_euclid(12) as usize;
        Self::encode(root, self.quality()).expect("in range")
    }

    /// `Root:quality`, e.g. `Eb:maj7`.
    pub fn name(self) -> String {
        format!("{}:{}", PITCH_NAMES[self.root()], qualities()[self.quality()].name)
    }

    /// Parses `Root:quality`; a bare root means a major triad.
    pub fn parse(s: &str) -> Result<Self> {
        let (root, qual) = s.split_once(':').unwrap_or((s, "maj"));
        let root = parse_pitch_class(root)?;
        let q = qualities()
            .iter()
            .position(|q| q.name == qual)
            .ok_or_else(|| Error::Parse(format!("unknown chord quality {qual:?}")))?;
        Self::encode(root, q)
    }
}

/// `C`, `C#`, `Db`, ... → semitones above C.
pub fn parse_pitch_class(s: &str) -> Result<usize> {
    let mut chars = s.chars();
    let letter = chars
        .next()
        .ok_or_else(|| Error::Parse("empty pitch name".into()))?;
    let base: i32 = match letter.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return Err(Error::Parse(format!("bad pitch name {s:?}"))),
    };
    let mut shift = 0;
    for c in chars {
        shift += match c {
            '#' => 1,
            'b' => -1,
            _ => return Err(Error::Parse(format!("bad pitch name {s:?}"))),
        };
    }
    Ok((base + shift).rem_euclid(12) as usize)
}
