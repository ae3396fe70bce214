use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{Array2, RngState};

use super::{mel_filterbank, AudioClip, MelSpec, Stft, HOP, LOG_OFFSET, N_FFT, SAMPLE_RATE};

/// Multiplicative-update iterations of the nonnegative mel inverse.
const NNLS_ITERS: usize = 60;
/// Seed of the initial phase; fixed so synthesis is reproducible.
const PHASE_SEED: u64 = 0x6772_6966_6669_6e00;

/// Linear power spectrogram (`n_bins × T`) whose mel projection best matches
/// `log_mel` in the least-squares sense, subject to nonnegativity.
pub fn mel_to_linear_power(log_mel: &Array2) -> Array2 {
    let fb = mel_filterbank();
    let n_bins = N_FFT / 2 + 1;
    let mut out = Array2::zeros(n_bins, log_mel.cols());
    let mut x = vec![0.0; n_bins];
    let mut mtm = vec![0.0; n_bins];
    let mut mt_target = vec![0.0; n_bins];
    for t in 0..log_mel.cols() {
        let target: Vec<f64> = log_mel
            .col(t)
            .iter()
            .map(|&v| (v.exp() - LOG_OFFSET).max(0.0))
            .collect();
        if target.iter().all(|&v| v == 0.0) {
            continue;
        }
        fb.apply_transpose(&target, &mut mt_target);
        x.copy_from_slice(&mt_target);
        for _ in 0..NNLS_ITERS {
            let proj = fb.apply(&x);
            fb.apply_transpose(&proj, &mut mtm);
            for ((xi, &num), &den) in x.iter_mut().zip(&mt_target).zip(&mtm) {
                if den > 0.0 {
                    *xi *= num / den;
                }
            }
        }
        for (b, &v) in x.iter().enumerate() {
            out[(b, t)] = v;
        }
    }
    out
}

/// Preview waveform from normalised mel features: denormalise, invert the
/// filterbank, then alternate projections to recover a consistent phase.
/// Returns `T · hop` samples clamped to `[-1, 1]`.
pub fn griffin_lim(mel: &MelSpec, iters: usize) -> Result<AudioClip> {
    if iters == 0 {
        return Err(Error::InvalidArgument("Griffin-Lim needs at least one iteration".into()));
    }
    let frames = mel.frames();
    let power = mel_to_linear_power(&mel.log_mel());
    let mag: Vec<Vec<f64>> = (0..frames)
        .map(|t| power.col(t).iter().map(|p| p.sqrt()).collect())
        .collect();
    let stft = Stft::new(N_FFT, HOP);
    let mut rng = RngState::new(PHASE_SEED);
    let mut spectra: Vec<Vec<Complex64>> = mag
        .iter()
        .map(|m| {
            m.iter()
                .map(|&a| Complex64::from_polar(a, std::f64::consts::TAU * rng.uniform()))
                .collect()
        })
        .collect();
    let mut signal = stft.inverse(&spectra);
    for _ in 1..iters {
        let rebuilt = stft.forward(&signal);
        for ((spec, m), r) in spectra.iter_mut().zip(&mag).zip(&rebuilt) {
            for ((s, &a), c) in spec.iter_mut().zip(m).zip(r) {
                let norm = c.norm();
                *s = if norm > 1e-12 {
                    c * (a / norm)
                } else {
                    Complex64::new(a, 0.0)
                };
            }
        }
        signal = stft.inverse(&spectra);
    }
    signal.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(AudioClip::new(signal, SAMPLE_RATE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{log_mel, melspec, sine, MelNorm};

    #[test]
    fn silence_stays_silent() {
        let mel = melspec(&AudioClip::new(vec![0.0; 22050], SAMPLE_RATE), &MelNorm::default()).unwrap();
        let audio = griffin_lim(&mel, 4).unwrap();
        assert!(audio.rms() < 1e-3);
    }

    #[test]
    fn duration_is_frames_times_hop() {
        let mel = melspec(&sine(440.0, 0.5, 0.5, SAMPLE_RATE), &MelNorm::default()).unwrap();
        let audio = griffin_lim(&mel, 2).unwrap();
        assert_eq!(audio.samples.len(), mel.frames() * HOP);
        assert!(audio.samples.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn mel_inverse_reprojects_close_to_target() {
        let lm = log_mel(&sine(440.0, 0.5, 0.3, SAMPLE_RATE)).unwrap();
        let lin = mel_to_linear_power(&lm);
        let fb = mel_filterbank();
        let t = lm.cols() / 2;
        let proj = fb.apply(&lin.col(t));
        let target: Vec<f64> = lm.col(t).iter().map(|v| v.exp() - LOG_OFFSET).collect();
        let peak = target.iter().cloned().fold(0.0, f64::max);
        let err = proj.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05 * peak, "err {err} peak {peak}");
    }

    #[test]
    fn zero_iterations_rejected() {
        let mel = melspec(&sine(440.0, 0.5, 0.1, SAMPLE_RATE), &MelNorm::default()).unwrap();
        assert!(griffin_lim(&mel, 0).is_err());
    }
}
