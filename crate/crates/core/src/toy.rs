//! Seeded synthetic corpora for smoke runs and regression experiments:
//! pseudo-singing mel clips, chord progressions and melody/chord pairs.

use crate::chordgen::{Beat, ChordToken, GenCondition, Key, LeadSheet, TimeSignature};
use crate::features::{mel_filterbank, N_MELS};
use crate::numerics::{Array2, RngState};
use crate::trainer::Example;

/// Normalised `80 × frames` mel clip of a voice-like tone: a smooth pitch
/// contour (slow glide plus vibrato) with decaying harmonics and a
/// breathing amplitude envelope.
pub fn pseudo_singing_clip(frames: usize, rng: &mut RngState) -> Array2 {
    let centres = mel_filterbank().centers_hz();
    let base = 140.0 + 220.0 * rng.uniform();
    let glide = 0.25 * (rng.uniform() - 0.5);
    let vib_rate = 0.15 + 0.1 * rng.uniform();
    let vib_depth = 0.01 + 0.02 * rng.uniform();
    let phase = std::f64::consts::TAU * rng.uniform();
    let breath = 20.0 + 30.0 * rng.uniform();
    let mut out = Array2::zeros(N_MELS, frames);
    for t in 0..frames {
        let x = t as f64;
        let f0 = base
            * (glide * x / frames.max(1) as f64 + vib_depth * (vib_rate * x + phase).sin()).exp2();
        let env = 0.6 + 0.4 * (std::f64::consts::TAU * x / breath + phase).sin().abs();
        for (b, &c) in centres.iter().enumerate() {
            let mut s = 0.0;
            for k in 1..=8 {
                let h = k as f64 * f0;
                let width = 0.03 * h + 25.0;
                s += 0.75f64.powi(k - 1) * (-((c - h) / width).powi(2)).exp();
            }
            out[(b, t)] = (2.0 * env * s).min(1.0) * 2.0 - 1.0;
        }
    }
    out
}

/// `n` unconditioned clips of `frames` frames.
pub fn pseudo_singing_corpus(n: usize, frames: usize, seed: u64) -> Vec<Example> {
    let mut rng = RngState::new(seed);
    (0..n)
        .map(|_| Example {
            mel: pseudo_singing_clip(frames, &mut rng),
            cond: None,
        })
        .collect()
}

fn chords(names: &[&str]) -> Vec<ChordToken> {
    names
        .iter()
        .map(|n| ChordToken::parse(n).expect("valid chord name"))
        .collect()
}

/// Three distinct progressions, each with its own key, tempo and metre so
/// the condition identifies the piece.
pub fn toy_progressions() -> Vec<LeadSheet> {
    let pieces: [(GenCondition, Vec<ChordToken>); 3] = [
        (
            GenCondition { key: Key::major(0), tempo: 120.0, time_signature: TimeSignature::FourFour },
            chords(&["C:maj", "C:maj", "A:min", "A:min", "F:maj", "F:maj", "G:7", "G:7"]),
        ),
        (
            GenCondition { key: Key::minor(9), tempo: 90.0, time_signature: TimeSignature::ThreeFour },
            chords(&["A:min", "A:min", "A:min", "D:min", "D:min", "D:min", "E:7", "E:7", "E:7"]),
        ),
        (
            GenCondition { key: Key::major(2), tempo: 160.0, time_signature: TimeSignature::TwoFour },
            chords(&["D:maj7", "B:min7", "E:min7", "A:7", "D:maj7", "B:min7"]),
        ),
    ];
    pieces
        .into_iter()
        .map(|(condition, cs)| LeadSheet {
            condition,
            beats: cs.into_iter().map(|chord| Beat { chord, melody: None }).collect(),
        })
        .collect()
}

/// Diatonic triads of C major, by scale degree.
const DIATONIC: [&str; 7] = ["C:maj", "D:min", "E:min", "F:maj", "G:maj", "A:min", "B:dim"];

/// Melody/chord pair: a random diatonic progression, one chord per beat held
/// for two beats, and a melody drawn from the tones of the sounding chord.
pub fn harmonized_sheet(beats: usize, rng: &mut RngState) -> LeadSheet {
    let mut out = Vec::with_capacity(beats);
    let mut chord = ChordToken::parse(DIATONIC[0]).expect("valid");
    for b in 0..beats {
        if b % 2 == 0 {
            chord = ChordToken::parse(DIATONIC[rng.below(DIATONIC.len())]).expect("valid");
        }
        let tones: Vec<usize> = (0..12).filter(|&pc| chord.chroma()[pc]).collect();
        let pc = tones[rng.below(tones.len())];
        out.push(Beat {
            chord,
            melody: Some((60 + pc) as u8),
        });
    }
    LeadSheet {
        condition: GenCondition { key: Key::major(0), tempo: 120.0, time_signature: TimeSignature::FourFour },
        beats: out,
    }
}

pub fn harmonized_corpus(n: usize, beats: usize, seed: u64) -> Vec<LeadSheet> {
    let mut rng = RngState::new(seed);
    (0..n).map(|_| harmonized_sheet(beats, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_normalised_and_seeded() {
        let a = pseudo_singing_corpus(3, 64, 5);
        let b = pseudo_singing_corpus(3, 64, 5);
        assert_eq!(a, b);
        for ex in &a {
            assert_eq!(ex.mel.shape(), (80, 64));
            assert!(ex.mel.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(ex.mel.data().iter().any(|&v| v > 0.0));
        }
        assert_ne!(a[0].mel, a[1].mel);
    }

    #[test]
    fn melody_tones_belong_to_chord() {
        let corpus = harmonized_corpus(5, 16, 1);
        for s in &corpus {
            for b in &s.beats {
                assert!(b.chord.chroma()[b.melody.unwrap() as usize % 12]);
            }
        }
    }

    #[test]
    fn progressions_have_distinct_conditions() {
        let p = toy_progressions();
        assert_eq!(p.len(), 3);
        assert_ne!(p[0].condition.to_vector(), p[1].condition.to_vector());
        assert_ne!(p[1].condition.to_vector(), p[2].condition.to_vector());
    }
}
