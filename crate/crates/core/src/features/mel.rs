//! Slaney-style mel scale and filterbank (linear below 1 kHz, logarithmic
//! above, each triangle normalised to unit area in Hz).

use crate::numerics::Array2;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// One triangular band as a contiguous run of FFT-bin weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MelBand {
    pub start_bin: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub bands: Vec<MelBand>,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(sample_rate: f64, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let fft_freqs: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate / n_fft as f64)
            .collect();
        let (mmin, mmax) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let mel_f: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mmin + (mmax - mmin) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bands = (0..n_mels)
            .map(|i| {
                let (lo, mid, hi) = (mel_f[i], mel_f[i + 1], mel_f[i + 2]);
                let enorm = 2.0 / (hi - lo);
                let mut start = None;
                let mut weights = Vec::new();
                for (k, &f) in fft_freqs.iter().enumerate() {
                    let lower = (f - lo) / (mid - lo);
                    let upper = (hi - f) / (hi - mid);
                    let w = lower.min(upper).max(0.0);
                    if w > 0.0 {
                        if start.is_none() {
                            start = Some(k);
                        }
                        // Bins inside a band are contiguous, so pad any gap.
                        let s = start.expect("set above");
                        weights.resize(k - s, 0.0);
                        weights.push(w * enorm);
                    }
                }
                MelBand {
                    start_bin: start.unwrap_or(0),
                    weights,
                    center_hz: mid,
                }
            })
            .collect();
        Self { bands, n_bins }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center_hz).collect()
    }

    /// Band energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|b| {
                b.weights
                    .iter()
                    .zip(&power[b.start_bin..])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }

    /// `Mᵀ m` for one frame of band values.
    pub fn apply_transpose(&self, mel: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (b, &m) in self.bands.iter().zip(mel) {
            for (o, w) in out[b.start_bin..].iter_mut().zip(&b.weights) {
                *o += w * m;
            }
        }
    }

    /// Dense `n_mels × n_bins` matrix.
    pub fn to_dense(&self) -> Array2 {
        let mut out = Array2::zeros(self.n_mels(), self.n_bins);
        for (i, b) in self.bands.iter().enumerate() {
            for (j, &w) in b.weights.iter().enumerate() {
                out[(i, b.start_bin + j)] = w;
            }
        }
        out
    }

    /// Index of the band whose centre is closest to `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        let mut best = 0;
        for (i, b) in self.bands.iter().enumerate() {
            if (b.center_hz - hz).abs() < (self.bands[best].center_hz - hz).abs() {
                best = i;
            }
        }
        best
    }
}
