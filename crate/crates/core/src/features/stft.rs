use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `n` with reflection at both ends
/// (edge samples are not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Centred short-time Fourier transform with a periodic Hann window.
///
/// Frame `t` is centred on sample `t · hop`; the signal is reflect-padded by
/// `n_fft / 2` on both sides and `ceil(len / hop)` frames are produced.
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One frame of windowed samples centred at `center` (reflect padding).
    pub fn frame(&self, signal: &[f64], center: usize) -> Vec<f64> {
        let half = (self.n_fft / 2) as isize;
        (0..self.n_fft)
            .map(|i| {
                let idx = center as isize - half + i as isize;
                signal[reflect(idx, signal.len())] * self.window[i]
            })
            .collect()
    }

    /// Complex spectra, one `n_bins` vector per frame.
    pub fn forward(&self, signal: &[f64]) -> Vec<Vec<Complex64>> {
        if signal.is_empty() {
            return Vec::new();
        }
        let frames = self.num_frames(signal.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..frames)
            .map(|t| {
                let f = self.frame(signal, t * self.hop);
                for (b, s) in buf.iter_mut().zip(&f) {
                    *b = Complex64::new(*s, 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    pub fn power(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        self.forward(signal)
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Windowed overlap-add inverse with squared-window normalisation.
    /// Returns `hop · frames` samples, so a forward pass over the result
    /// yields the same frame count. Requires `n_fft ≥ 2 · hop`.
    pub fn inverse(&self, spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let frames = spectra.len();
        if frames == 0 {
            return Vec::new();
        }
        let n = self.n_fft;
        debug_assert!(n >= 2 * self.hop);
        let total = n + self.hop * (frames - 1);
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, spec) in spectra.iter().enumerate() {
            buf[..spec.len()].copy_from_slice(spec);
            for k in 1..n - spec.len() + 1 {
                buf[n - k] = spec[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-10 {
                *o /= w;
            }
        }
        let half = n / 2;
        out[half..half + self.hop * frames].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let n = 5;
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, n)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn frame_count_is_ceil() {
        let s = Stft::new(2048, 512);
        assert_eq!(s.num_frames(220_500), 431);
        assert_eq!(s.num_frames(441_000), 862);
        assert_eq!(s.num_frames(512), 1);
        assert_eq!(s.num_frames(513), 2);
    }

    #[test]
    fn inverse_reconstructs_interior() {
        let s = Stft::new(256, 64);
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        let y = s.inverse(&s.forward(&x));
        assert_eq!(y.len(), s.num_frames(x.len()) * 64);
        for i in 0..x.len() {
            assert!((x[i] - y[i]).abs() < 1e-9, "sample {i}");
        }
    }
}
