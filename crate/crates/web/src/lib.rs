//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: analyse a synthetic tone (mel + pitch contour),
//! resynthesise it through Griffin-Lim, and train a small singer on the toy
//! corpus in the page and sample from it.

use wasm_bindgen::prelude::*;

use g3singer::evalmetrics::track_pitch;
use g3singer::features::{griffin_lim, melspec, AudioClip, MelNorm, MelSpec, SAMPLE_RATE};
use g3singer::g3began::ModelConfig;
use g3singer::numerics::{Array2, RngState};
use g3singer::toy::pseudo_singing_corpus;
use g3singer::trainer::{Example, TrainConfig, Trainer};

fn js_err(e: g3singer::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Column-major `f32` copy (frame after frame), the layout the canvas code
/// draws from.
fn frames_major(a: &Array2) -> Vec<f32> {
    let mut out = Vec::with_capacity(a.len());
    for t in 0..a.cols() {
        out.extend(a.col(t).into_iter().map(|v| v as f32));
    }
    out
}

/// A harmonic tone with a slow vibrato, in `[-1, 1]`.
pub fn demo_tone(freq: f64, seconds: f64) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let n = (seconds.max(0.05) * sr) as usize;
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = freq * (1.0 + 0.01 * (2.0 * std::f64::consts::PI * 5.0 * t).sin());
            phase += 2.0 * std::f64::consts::PI * f / sr;
            (1..=4).map(|k| 0.25 / k as f64 * (k as f64 * phase).sin()).sum()
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

#[wasm_bindgen]
pub struct Analysis {
    mel: Vec<f32>,
    frames: usize,
    pitch: Vec<f32>,
    audio: Vec<f32>,
}

#[wasm_bindgen]
impl Analysis {
    /// Normalised mel, 80 values per frame.
    #[wasm_bindgen(getter)]
    pub fn mel(&self) -> Vec<f32> {
        self.mel.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Detected pitch per frame in Hz, 0 where unvoiced.
    #[wasm_bindgen(getter)]
    pub fn pitch(&self) -> Vec<f32> {
        self.pitch.clone()
    }

    /// Audio at 22050 Hz.
    #[wasm_bindgen(getter)]
    pub fn audio(&self) -> Vec<f32> {
        self.audio.clone()
    }

    /// Median of the voiced pitch values, 0 if none.
    #[wasm_bindgen(getter)]
    pub fn median_pitch(&self) -> f32 {
        let mut voiced: Vec<f32> = self.pitch.iter().copied().filter(|&p| p > 0.0).collect();
        if voiced.is_empty() {
            return 0.0;
        }
        voiced.sort_by(f32::total_cmp);
        voiced[voiced.len() / 2]
    }
}

fn analyse(clip: AudioClip, mel: &MelSpec) -> Analysis {
    let track = track_pitch(&clip);
    Analysis {
        mel: frames_major(&mel.features),
        frames: mel.frames(),
        pitch: track.pitch_hz.iter().map(|&p| p as f32).collect(),
        audio: clip.samples.iter().map(|&s| s as f32).collect(),
    }
}

/// Mel spectrogram and pitch contour of a synthetic tone.
#[wasm_bindgen]
pub fn analyze_tone(freq: f64, seconds: f64) -> Result<Analysis, JsError> {
    let clip = demo_tone(freq, seconds);
    let mel = melspec(&clip, &MelNorm::default()).map_err(js_err)?;
    Ok(analyse(clip, &mel))
}

/// Inverts the tone's mel spectrogram with Griffin-Lim and re-analyses the
/// result, so the page can compare pitch before and after.
#[wasm_bindgen]
pub fn resynthesize_tone(freq: f64, seconds: f64, iters: usize) -> Result<Analysis, JsError> {
    let mel = melspec(&demo_tone(freq, seconds), &MelNorm::default()).map_err(js_err)?;
    let audio = griffin_lim(&mel, iters).map_err(js_err)?;
    let again = melspec(&audio, &MelNorm::default()).map_err(js_err)?;
    Ok(analyse(audio, &again))
}

/// A free singer trained in the page on pseudo-singing clips.
#[wasm_bindgen]
pub struct ToySinger {
    trainer: Trainer,
    corpus: Vec<Example>,
    cursor: usize,
    batches: Vec<Vec<usize>>,
}

#[wasm_bindgen]
impl ToySinger {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, width: usize) -> Result<ToySinger, JsError> {
        let config = TrainConfig {
            seed,
            model: ModelConfig { width, ..ModelConfig::default() },
            ..TrainConfig::default()
        };
        Ok(ToySinger {
            trainer: Trainer::new(config).map_err(js_err)?,
            corpus: pseudo_singing_corpus(20, 64, seed),
            cursor: 0,
            batches: Vec::new(),
        })
    }

    /// Runs `steps` training steps; returns the convergence metric of the
    /// last one.
    pub fn train(&mut self, steps: usize) -> Result<f64, JsError> {
        let mut metric = f64::NAN;
        for _ in 0..steps {
            if self.cursor == self.batches.len() {
                self.batches = self.trainer.epoch_batches(&self.corpus);
                self.cursor = 0;
            }
            let refs: Vec<&Example> = self.batches[self.cursor].iter().map(|&i| &self.corpus[i]).collect();
            self.cursor += 1;
            metric = self.trainer.train_step(&refs).map_err(js_err)?.conv_metric;
        }
        Ok(metric)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> u64 {
        self.trainer.state.step
    }

    #[wasm_bindgen(getter)]
    pub fn tau(&self) -> f64 {
        self.trainer.state.began.tau
    }

    /// One training clip, 80 values per frame.
    pub fn example(&self, index: usize) -> Vec<f32> {
        frames_major(&self.corpus[index % self.corpus.len()].mel)
    }

    /// A generated mel of `frames` frames, 80 values per frame.
    pub fn sample(&self, frames: usize, seed: u64) -> Result<Vec<f32>, JsError> {
        let mut rng = RngState::new(seed);
        let mel = self.trainer.model.sample(&mut rng, frames.max(1), None).map_err(js_err)?;
        Ok(frames_major(&mel))
    }
}
