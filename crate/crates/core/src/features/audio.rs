//! WAV ingestion and sample-rate conversion.

use std::path::Path;

use crate::error::{Error, Result};

use super::SAMPLE_RATE;

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.samples.iter().map(|s| s * k).collect(), self.sample_rate)
    }

    /// Converts to the pipeline rate of 22050 Hz.
    pub fn to_pipeline_rate(&self) -> Self {
        if self.sample_rate == SAMPLE_RATE {
            return self.clone();
        }
        Self::new(
            resample(&self.samples, self.sample_rate, SAMPLE_RATE),
            SAMPLE_RATE,
        )
    }
}

/// Sine tone helper used by tests, demos and fixtures.
pub fn sine(freq: f64, amplitude: f64, seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
    AudioClip::new(
        (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate,
    )
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

const ZERO_CROSSINGS: f64 = 16.0;

/// Rational-ratio windowed-sinc resampler.
///
/// Output sample `n` sits at input position `n · from / to`, kept as an exact
/// fraction so the filter phase cycles through `to / gcd` polyphase branches.
/// The kernel is a Hann-windowed sinc with 16 zero crossings per side and its
/// cutoff at the lower of the two Nyquist rates.
pub fn resample(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = (to as u64 / g, from as u64 / g);
    let cutoff = (to as f64 / from as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let out_len = ((input.len() as u64 * up).div_ceil(down)) as usize;
    let kernel = |x: f64| -> f64 {
        if x.abs() >= half_width {
            return 0.0;
        }
        let s = if x == 0.0 {
            1.0
        } else {
            let a = std::f64::consts::PI * cutoff * x;
            a.sin() / a
        };
        let w = 0.5 + 0.5 * (std::f64::consts::PI * x / half_width).cos();
        cutoff * s * w
    };
    (0..out_len)
        .map(|n| {
            let num = n as u64 * down;
            let base = (num / up) as isize;
            let frac = (num % up) as f64 / up as f64;
            let reach = half_width.ceil() as isize;
            let mut acc = 0.0;
            for k in (base - reach)..=(base + reach + 1) {
                if k < 0 || k as usize >= input.len() {
                    continue;
                }
                acc += input[k as usize] * kernel((base - k) as f64 + frac);
            }
            acc
        })
        .collect()
}

/// Reads PCM (8/16/24/32-bit) or 32-bit float WAV, downmixes to mono and
/// resamples to 22050 Hz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample.max(1) - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if mono.iter().any(|v| !v.is_finite()) {
        return Err(Error::Audio(format!("{}: non-finite samples", path.display())));
    }
    Ok(AudioClip::new(mono, spec.sample_rate).to_pipeline_rate())
}

/// Writes 16-bit PCM mono; samples are clamped to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let path = path.as_ref();
    let mut w = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    }
    w.finalize()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_length_and_tone() {
        let x = sine(440.0, 0.5, 1.0, 44_100);
        let y = resample(&x.samples, 44_100, 22_050);
        assert_eq!(y.len(), 22_050);
        let reference = sine(440.0, 0.5, 1.0, 22_050);
        let err = y[100..22_000]
            .iter()
            .zip(&reference.samples[100..22_000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max err {err}");
    }

    #[test]
    fn resample_odd_ratio() {
        let x = sine(300.0, 0.5, 0.5, 48_000);
        let y = resample(&x.samples, 48_000, 22_050);
        assert_eq!(y.len(), 11_025);
        let reference = sine(300.0, 0.5, 0.5, 22_050);
        let err = y[200..10_800]
            .iter()
            .zip(&reference.samples[200..10_800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max err {err}");
    }

    #[test]
    fn wav_round_trip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = sine(220.0, 0.3, 0.1, 22_050);
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in back.samples.iter().zip(&clip.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn garbage_wav_is_an_audio_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF....not a wav").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Audio(_))));
    }
}
