use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::features::{frames_for_samples, AudioClip, HOP};

/// Lowest reported pitch; lower estimates are zeroed.
pub const PITCH_MIN_HZ: f64 = 73.0;
/// Highest reported pitch; higher estimates are zeroed.
pub const PITCH_MAX_HZ: f64 = 988.0;
/// Analysis frame, centred on `t · hop` like the mel frames.
pub const FRAME: usize = 2048;
/// Difference-function integration window; also the largest lag.
pub const WINDOW: usize = FRAME / 2;
/// Absolute threshold on the cumulative-mean-normalised difference.
pub const YIN_THRESHOLD: f64 = 0.1;
/// Smallest lag searched (about 2 kHz at 22050 Hz).
const MIN_LAG: usize = 10;
/// Frames quieter than this carry no pitch.
const ENERGY_FLOOR: f64 = 1e-10;

/// Per-frame pitch estimates at the mel hop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PitchTrack {
    /// Hz; 0 marks an unvoiced frame.
    pub pitch_hz: Vec<f64>,
    /// In `[0, 1]`.
    pub confidence: Vec<f64>,
    /// Voicing score in `[0, 1]`.
    pub activation: Vec<f64>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.pitch_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch_hz.is_empty()
    }

    /// MIDI note of each frame whose pitch is set and confidence exceeds 0.5.
    pub fn confident_notes(&self) -> Vec<Option<u8>> {
        self.pitch_hz
            .iter()
            .zip(&self.confidence)
            .map(|(&f, &c)| (f > 0.0 && c > 0.5).then(|| hz_to_midi(f)))
            .collect()
    }
}

/// Nearest MIDI note, clamped to 0–127.
pub fn hz_to_midi(hz: f64) -> u8 {
    (69.0 + 12.0 * (hz / 440.0).log2()).round().clamp(0.0, 127.0) as u8
}

/// `20 log10(rms)` of each centred `FRAME`-sample window (zero padded),
/// one per mel frame.
pub fn frame_rms_db(clip: &AudioClip) -> Vec<f64> {
    let x = &clip.samples;
    (0..frames_for_samples(x.len()))
        .map(|t| {
            let frame = centred_frame(x, t * HOP);
            let ms = frame.iter().map(|v| v * v).sum::<f64>() / FRAME as f64;
            10.0 * ms.max(1e-20).log10()
        })
        .collect()
}

fn centred_frame(x: &[f64], centre: usize) -> Vec<f64> {
    let start = centre as isize - (FRAME / 2) as isize;
    (0..FRAME)
        .map(|i| {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < x.len() {
                x[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

struct Yin {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Yin {
    fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(2 * FRAME),
            inv: planner.plan_fft_inverse(2 * FRAME),
        }
    }

    /// `d(τ) = Σ_{j<W} (x_j − x_{j+τ})²` for `τ ∈ [0, W]`, with the cross
    /// term computed by FFT.
    fn difference(&self, frame: &[f64]) -> Vec<f64> {
        let n = 2 * FRAME;
        let mut a: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(if i < FRAME { frame[i] } else { 0.0 }, 0.0))
            .collect();
        let mut b: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(if i < WINDOW { frame[i] } else { 0.0 }, 0.0))
            .collect();
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y.conj();
        }
        self.inv.process(&mut a);
        let mut sq = vec![0.0; FRAME + 1];
        for i in 0..FRAME {
            sq[i + 1] = sq[i] + frame[i] * frame[i];
        }
        let head = sq[WINDOW];
        (0..=WINDOW)
            .map(|tau| {
                let cross = a[tau].re / n as f64;
                (head + sq[tau + WINDOW] - sq[tau] - 2.0 * cross).max(0.0)
            })
            .collect()
    }

    /// `(f0 Hz, confidence)` for one frame.
    fn estimate(&self, frame: &[f64], sample_rate: f64) -> (f64, f64) {
        let d = self.difference(frame);
        let mut cmnd = vec![1.0; d.len()];
        let mut running = 0.0;
        for tau in 1..d.len() {
            running += d[tau];
            cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
        }
        let last = d.len() - 1;
        let mut best = None;
        let mut tau = MIN_LAG;
        while tau < last {
            if cmnd[tau] < YIN_THRESHOLD {
                while tau + 1 < last && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let tau = best.unwrap_or_else(|| {
            (MIN_LAG..last)
                .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
                .expect("non-empty lag range")
        });
        let conf = (1.0 - cmnd[tau]).clamp(0.0, 1.0);
        let (l, c, r) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = l - 2.0 * c + r;
        let shift = if denom.abs() > 1e-12 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        (sample_rate / (tau as f64 + shift), conf)
    }
}

/// YIN pitch track at the mel frame rate (`ceil(len / 512)` frames).
///
/// Activation is confidence gated by loudness: full weight from −40 dBFS,
/// falling linearly to zero at −60 dBFS. Aperiodic frames and estimates
/// outside `[73, 988]` Hz are reported as unvoiced with zero confidence.
pub fn track_pitch(clip: &AudioClip) -> PitchTrack {
    let clip = clip.to_pipeline_rate();
    let sr = clip.sample_rate as f64;
    let yin = Yin::new();
    let rms_db = frame_rms_db(&clip);
    let mut track = PitchTrack::default();
    for (t, &db) in rms_db.iter().enumerate() {
        let frame = centred_frame(&clip.samples, t * HOP);
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        let (mut f0, mut conf) = if energy > ENERGY_FLOOR {
            yin.estimate(&frame, sr)
        } else {
            (0.0, 0.0)
        };
        if conf == 0.0 || !(PITCH_MIN_HZ..=PITCH_MAX_HZ).contains(&f0) {
            f0 = 0.0;
            conf = 0.0;
        }
        let gate = ((db + 60.0) / 20.0).clamp(0.0, 1.0);
        track.pitch_hz.push(f0);
        track.confidence.push(conf);
        track.activation.push(conf * gate);
    }
    track
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{sine, SAMPLE_RATE};

    fn interior(track: &PitchTrack) -> std::ops::Range<usize> {
        4..track.len() - 4
    }

    #[test]
    fn a440_sine() {
        let track = track_pitch(&sine(440.0, 0.5, 1.0, SAMPLE_RATE));
        for t in interior(&track) {
            assert!((track.pitch_hz[t] - 440.0).abs() < 3.0, "{}", track.pitch_hz[t]);
            assert!(track.confidence[t] > 0.9);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let track = track_pitch(&AudioClip::new(vec![0.0; 22050], SAMPLE_RATE));
        assert!(track.pitch_hz.iter().all(|&p| p == 0.0));
        assert!(track.activation.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn fifty_hertz_is_out_of_range() {
        let track = track_pitch(&sine(50.0, 0.5, 1.0, SAMPLE_RATE));
        assert!(track.pitch_hz.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn whole_tone_up_scales_pitch() {
        for base in [110.0, 220.0, 330.0, 600.0] {
            let a = track_pitch(&sine(base, 0.5, 0.5, SAMPLE_RATE));
            let b = track_pitch(&sine(base * 2f64.powf(2.0 / 12.0), 0.5, 0.5, SAMPLE_RATE));
            let t = a.len() / 2;
            let ratio = b.pitch_hz[t] / a.pitch_hz[t];
            assert!((ratio / 2f64.powf(2.0 / 12.0) - 1.0).abs() < 0.01, "{base}: {ratio}");
        }
    }

    #[test]
    fn quiet_tone_keeps_pitch_but_loses_activation() {
        let loud = track_pitch(&sine(300.0, 0.5, 0.5, SAMPLE_RATE));
        let quiet = track_pitch(&sine(300.0, 0.0005, 0.5, SAMPLE_RATE));
        let t = loud.len() / 2;
        assert!((loud.pitch_hz[t] - quiet.pitch_hz[t]).abs() < 1e-6);
        assert!(loud.activation[t] > 0.9);
        assert!(quiet.activation[t] < 0.1);
    }

    #[test]
    fn midi_conversion() {
        assert_eq!(hz_to_midi(440.0), 69);
        assert_eq!(hz_to_midi(261.63), 60);
    }
}
