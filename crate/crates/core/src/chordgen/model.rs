use serde::{Deserialize, Serialize};

use super::leadsheet::{GenCondition, LeadSheet, TimeSignature, BEAT_POSITIONS, GEN_CONDITION_DIM};
use super::vocab::{ChordToken, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::layers::{gaussian, GruLayer, Linear};
use crate::numerics::{log_softmax_at, softmax_columns, Array2, Graph, ParamStore, RngState, Var};

/// Embedding row fed before the first chord.
pub const START_ID: usize = VOCAB_SIZE;
/// Melody chroma rows appended to the step input of the harmonisation model.
pub const MELODY_DIM: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChordGenConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Melody-harmonisation variant: adds melody chroma to every step and
    /// drops the key/tempo/metre condition.
    pub melody: bool,
}

impl Default for ChordGenConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            hidden_dim: 512,
            layers: 3,
            melody: false,
        }
    }
}

impl ChordGenConfig {
    pub fn harmonizer() -> Self {
        Self {
            melody: true,
            ..Self::default()
        }
    }

    /// Step input width: embedding + beat one-hot (+ melody chroma).
    pub fn input_dim(&self) -> usize {
        self.embed_dim + BEAT_POSITIONS + if self.melody { MELODY_DIM } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument("chord model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Autoregressive chord model: one step per quarter-note beat.
#[derive(Clone, Debug)]
pub struct ChordGenModel {
    pub config: ChordGenConfig,
    pub params: ParamStore,
    in_proj: Linear,
    grus: Vec<GruLayer>,
    cond_proj: Option<Linear>,
    out_proj: Linear,
}

/// Recurrent state between graph-free steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    hidden: Vec<Vec<f64>>,
    beat: usize,
}

const EMBED: &str = "embed";

impl ChordGenModel {
    /// Layer layout without parameters.
    pub fn skeleton(config: ChordGenConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let grus = (0..config.layers)
            .map(|i| GruLayer::new(format!("gru{i}"), h, h))
            .collect();
        Ok(Self {
            in_proj: Linear::new("in", config.input_dim(), h),
            cond_proj: (!config.melody).then(|| Linear::new("cond", GEN_CONDITION_DIM, h)),
            out_proj: Linear::new("out", h, VOCAB_SIZE),
            grus,
            params: ParamStore::new(),
            config,
        })
    }

    /// Fresh parameters.
    pub fn new(config: ChordGenConfig, rng: &mut RngState) -> Result<Self> {
        let mut m = Self::skeleton(config)?;
        let mut p = ParamStore::new();
        p.insert(EMBED, gaussian(rng, VOCAB_SIZE + 1, m.config.embed_dim, 1.0))?;
        m.in_proj.init(&mut p, rng)?;
        for gru in &m.grus {
            gru.init(&mut p, rng)?;
        }
        if let Some(c) = &m.cond_proj {
            c.init(&mut p, rng)?;
        }
        m.out_proj.init(&mut p, rng)?;
        m.params = p;
        Ok(m)
    }

    /// Zeroes the output projection, making every prediction uniform.
    pub fn zero_output_projection(&mut self) {
        self.params.value_mut(&self.out_proj.weight_name()).fill(0.0);
        self.params.value_mut(&self.out_proj.bias_name()).fill(0.0);
    }

    pub fn is_harmonizer(&self) -> bool {
        self.config.melody
    }

    fn check_condition(&self, cond: Option<&GenCondition>) -> Result<()> {
        match (self.cond_proj.is_some(), cond.is_some()) {
            (true, false) => Err(Error::Condition("chord generator needs a key/tempo/metre condition".into())),
            (false, true) => Err(Error::Condition("harmonisation model takes no generation condition".into())),
            _ => Ok(()),
        }
    }

    fn check_melody(&self, melody: Option<&Array2>, steps: usize) -> Result<()> {
        match (self.config.melody, melody) {
            (true, Some(m)) if m.shape() == (MELODY_DIM, steps) => Ok(()),
            (true, Some(m)) => Err(Error::Shape(format!(
                "melody chroma is {}x{}, expected 12x{steps}",
                m.rows(),
                m.cols()
            ))),
            (true, None) => Err(Error::InvalidArgument("harmonisation model needs a melody".into())),
            (false, Some(_)) => Err(Error::InvalidArgument("chord generator takes no melody".into())),
            (false, None) => Ok(()),
        }
    }

    /// Extra rows of the step input for `steps` beats: beat one-hot, then the
    /// column-normalised melody chroma when present.
    fn side_inputs(&self, ts: TimeSignature, melody: Option<&Array2>, steps: usize) -> Array2 {
        let rows = BEAT_POSITIONS + if self.config.melody { MELODY_DIM } else { 0 };
        let mut out = Array2::zeros(rows, steps);
        for t in 0..steps {
            out[(ts.beat_position(t), t)] = 1.0;
        }
        if let Some(m) = melody {
            let m = normalize_chroma(m);
            for r in 0..MELODY_DIM {
                out.row_mut(BEAT_POSITIONS + r).copy_from_slice(m.row(r));
            }
        }
        out
    }

    /// Teacher-forced logits (`612 × len`) for predicting each of `chords`.
    pub fn logits_graph(
        &self,
        g: &mut Graph,
        chords: &[ChordToken],
        ts: TimeSignature,
        melody: Option<&Array2>,
        cond: Option<&GenCondition>,
    ) -> Result<Var> {
        if chords.is_empty() {
            return Err(Error::InvalidArgument("empty chord sequence".into()));
        }
        self.check_condition(cond)?;
        self.check_melody(melody, chords.len())?;
        let ids: Vec<usize> = std::iter::once(START_ID)
            .chain(chords[..chords.len() - 1].iter().map(|c| c.id()))
            .collect();
        let table = g.param(&self.params, EMBED)?;
        let emb = g.embedding(table, &ids)?;
        let side = g.constant(self.side_inputs(ts, melody, chords.len()))?;
        let x = g.concat_rows(&[emb, side])?;
        let mut h = self.in_proj.forward(g, &self.params, x)?;
        let h0 = match (&self.cond_proj, cond) {
            (Some(proj), Some(c)) => {
                let cv = g.constant(Array2::column(&c.to_vector()))?;
                let pre = proj.forward(g, &self.params, cv)?;
                Some(g.tanh(pre)?)
            }
            _ => None,
        };
        for (i, gru) in self.grus.iter().enumerate() {
            h = gru.forward_from(g, &self.params, h, if i == 0 { h0 } else { None })?;
        }
        self.out_proj.forward(g, &self.params, h)
    }

    /// Mean teacher-forced negative log-likelihood of a lead sheet.
    pub fn sheet_loss(&self, g: &mut Graph, sheet: &LeadSheet) -> Result<Var> {
        let chords = sheet.chords();
        let melody = self.config.melody.then(|| sheet.melody_chroma());
        let cond = (!self.config.melody).then_some(&sheet.condition);
        let logits = self.logits_graph(g, &chords, sheet.condition.time_signature, melody.as_ref(), cond)?;
        let targets: Vec<usize> = chords.iter().map(|c| c.id()).collect();
        g.softmax_cross_entropy(logits, &targets)
    }

    pub fn initial_state(&self, cond: Option<&GenCondition>) -> Result<StepState> {
        self.check_condition(cond)?;
        let h = self.config.hidden_dim;
        let mut hidden = vec![vec![0.0; h]; self.grus.len()];
        if let (Some(proj), Some(c)) = (&self.cond_proj, cond) {
            hidden[0] = proj
                .apply(&self.params, &c.to_vector())
                .into_iter()
                .map(f64::tanh)
                .collect();
        }
        Ok(StepState { hidden, beat: 0 })
    }

    /// Next-chord logits given the previous chord (`None` at the start),
    /// the beat slot in `[0, 12)` and, for the harmoniser, the melody chroma
    /// of the beat being harmonised.
    pub fn step_logits(
        &self,
        state: &mut StepState,
        prev: Option<ChordToken>,
        beat_pos: usize,
        melody: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        if beat_pos >= BEAT_POSITIONS {
            return Err(Error::InvalidArgument(format!("beat position {beat_pos} out of range")));
        }
        let mut x = self
            .params
            .value(EMBED)
            .row(prev.map_or(START_ID, ChordToken::id))
            .to_vec();
        let mut beat = [0.0; BEAT_POSITIONS];
        beat[beat_pos] = 1.0;
        x.extend_from_slice(&beat);
        match (self.config.melody, melody) {
            (true, Some(m)) if m.len() == MELODY_DIM => {
                let col = normalize_chroma(&Array2::column(m));
                x.extend_from_slice(col.data());
            }
            (true, _) => return Err(Error::InvalidArgument("harmoniser step needs 12 melody values".into())),
            (false, Some(_)) => return Err(Error::InvalidArgument("chord generator takes no melody".into())),
            (false, None) => {}
        }
        let mut h = self.in_proj.apply(&self.params, &x);
        for (gru, state_h) in self.grus.iter().zip(state.hidden.iter_mut()) {
            *state_h = gru.step(&self.params, &h, state_h);
            h = state_h.clone();
        }
        state.beat += 1;
        Ok(self.out_proj.apply(&self.params, &h))
    }

    /// Next-chord distribution; sums to one.
    pub fn step_probs(
        &self,
        state: &mut StepState,
        prev: Option<ChordToken>,
        beat_pos: usize,
        melody: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let logits = self.step_logits(state, prev, beat_pos, melody)?;
        Ok(softmax_columns(&Array2::column(&logits)).into_vec())
    }

    /// Samples `bars · beats_per_bar` chords. `temperature` scales the
    /// logits; values below `1e-6` select the argmax at every step.
    pub fn sample_progression(
        &self,
        cond: &GenCondition,
        bars: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<ChordToken>> {
        if bars == 0 {
            return Err(Error::InvalidArgument("need at least one bar".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if self.config.melody {
            return Err(Error::InvalidArgument("sampling needs the chord generator, not the harmoniser".into()));
        }
        let ts = cond.time_signature;
        let mut rng = RngState::new(seed);
        let mut state = self.initial_state(Some(cond))?;
        let mut out = Vec::with_capacity(bars * ts.beats_per_bar());
        let mut prev = None;
        for beat in 0..bars * ts.beats_per_bar() {
            let logits = self.step_logits(&mut state, prev, ts.beat_position(beat), None)?;
            let id = if temperature < 1e-6 {
                argmax(&logits)
            } else {
                let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
                let probs = softmax_columns(&Array2::column(&scaled)).into_vec();
                draw(&probs, rng.uniform())
            };
            let token = ChordToken::new(id)?;
            out.push(token);
            prev = Some(token);
        }
        Ok(out)
    }

    /// `log P(chord_t | melody, earlier chords)` for every step, evaluated
    /// with the harmonisation model.
    pub fn chord_log_likelihoods(
        &self,
        melody_chroma: &Array2,
        chords: &[ChordToken],
        ts: TimeSignature,
    ) -> Result<Vec<f64>> {
        if !self.config.melody {
            return Err(Error::InvalidArgument("likelihood of chords given melody needs the harmoniser".into()));
        }
        if melody_chroma.rows() != MELODY_DIM || melody_chroma.cols() != chords.len() {
            return Err(Error::Shape(format!(
                "{} melody steps for {} chords",
                melody_chroma.cols(),
                chords.len()
            )));
        }
        let mut state = self.initial_state(None)?;
        let mut prev = None;
        chords
            .iter()
            .enumerate()
            .map(|(t, &c)| {
                let logits = self.step_logits(&mut state, prev, ts.beat_position(t), Some(&melody_chroma.col(t)))?;
                prev = Some(c);
                Ok(log_softmax_at(&Array2::column(&logits), 0, c.id()))
            })
            .collect()
    }
}

/// Mean per-step log-likelihood of `chords` given the melody; always ≤ 0.
pub fn matchness(
    mh: &ChordGenModel,
    melody_chroma: &Array2,
    chords: &[ChordToken],
    ts: TimeSignature,
) -> Result<f64> {
    if chords.is_empty() {
        return Err(Error::InvalidArgument("no chords to score".into()));
    }
    let ll = mh.chord_log_likelihoods(melody_chroma, chords, ts)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// Scales each non-zero column to sum to one.
pub fn normalize_chroma(m: &Array2) -> Array2 {
    let mut out = m.clone();
    for t in 0..m.cols() {
        let s: f64 = m.col(t).iter().map(|v| v.max(0.0)).sum();
        for r in 0..m.rows() {
            out[(r, t)] = if s > 0.0 { m[(r, t)].max(0.0) / s } else { 0.0 };
        }
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; `u ∈ [0, 1)`.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
