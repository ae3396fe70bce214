//! G3BEGAN: generator and autoencoding discriminator built from G3 blocks,
//! the BEGAN losses and the equilibrium controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    ActivationPlacement, G3Block, GroupNorm, GroupedDilatedConv1d, LEAKY_SLOPE,
};
use crate::numerics::{Array2, FeatureSeq, Graph, ParamStore, RngState, Var};

pub const MEL_DIM: usize = 80;
pub const PIANO_ROLL_DIM: usize = 88;
pub const CHORD_COND_DIM: usize = 24;

/// What the singer is conditioned on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondMode {
    /// Free singer: noise only.
    #[default]
    None,
    /// Accompanied singer: 88-key piano roll per frame.
    PianoRoll88,
    /// Solo singer: frame-wise chord chroma plus root one-hot.
    Chord,
}

impl CondMode {
    pub fn cond_dim(self) -> usize {
        match self {
            CondMode::None => 0,
            CondMode::PianoRoll88 => PIANO_ROLL_DIM,
            CondMode::Chord => CHORD_COND_DIM,
        }
    }

    pub fn parse(s: &str) -> Option<CondMode> {
        match s {
            "none" | "free" => Some(CondMode::None),
            "piano_roll88" | "piano-roll" | "accompanied" => Some(CondMode::PianoRoll88),
            "chord" | "solo" => Some(CondMode::Chord),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CondMode::None => "free",
            CondMode::PianoRoll88 => "accompanied",
            CondMode::Chord => "solo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub noise_dim: usize,
    pub mel_dim: usize,
    /// Channel width of every block; must be divisible by 4.
    pub width: usize,
    pub cond: CondMode,
    pub placement: ActivationPlacement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            noise_dim: 20,
            mel_dim: MEL_DIM,
            width: 128,
            cond: CondMode::None,
            placement: ActivationPlacement::Branch,
        }
    }
}

/// input conv → group norm → leaky ReLU → two G3 blocks → output conv.
#[derive(Clone, Debug)]
pub struct Network {
    pub input_rows: usize,
    pub output_rows: usize,
    input_conv: GroupedDilatedConv1d,
    input_norm: GroupNorm,
    blocks: [G3Block; 2],
    output_conv: GroupedDilatedConv1d,
    tanh_head: bool,
}

impl Network {
    pub fn new(
        prefix: &str,
        input_rows: usize,
        width: usize,
        output_rows: usize,
        placement: ActivationPlacement,
        tanh_head: bool,
    ) -> Result<Self> {
        Ok(Self {
            input_rows,
            output_rows,
            input_conv: GroupedDilatedConv1d::new(
                format!("{prefix}.in_conv"),
                input_rows,
                width,
                3,
                1,
                1,
            )?,
            input_norm: GroupNorm::new(format!("{prefix}.in_norm"), width, 4)?,
            blocks: [
                G3Block::new(&format!("{prefix}.block1"), width, placement)?,
                G3Block::new(&format!("{prefix}.block2"), width, placement)?,
            ],
            output_conv: GroupedDilatedConv1d::new(
                format!("{prefix}.out_conv"),
                width,
                output_rows,
                3,
                1,
                1,
            )?,
            tanh_head,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        self.input_conv.init(store, rng)?;
        self.input_norm.init(store)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.output_conv.init(store, rng)?;
        // He init suits the hidden stack; the linear output head starts
        // smaller so initial outputs sit well inside the tanh range.
        let scale = (1.0 / self.output_conv.fan_in() as f64).sqrt()
            / (2.0 / self.output_conv.fan_in() as f64).sqrt();
        store
            .value_mut(&self.output_conv.weight_name())
            .scale_in_place(scale);
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.input_conv.forward(g, store, x)?;
        let h = self.input_norm.forward(g, store, h)?;
        let mut h = g.leaky_relu(h, LEAKY_SLOPE)?;
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        let y = self.output_conv.forward(g, store, h)?;
        if self.tanh_head {
            g.tanh(y)
        } else {
            Ok(y)
        }
    }
}

/// `(1 / (W·T)) Σ |reconstruction − target|`.
pub fn reconstruction_loss(reconstruction: &Array2, target: &Array2) -> Result<f64> {
    if reconstruction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            reconstruction.shape(),
            target.shape()
        )));
    }
    let s: f64 = reconstruction
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / target.len().max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct G3BeganModel {
    pub config: ModelConfig,
    pub generator: Network,
    pub discriminator: Network,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
}

impl G3BeganModel {
    /// Builds the network descriptors with empty parameter stores.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        if config.width == 0 || !config.width.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "width {} must be a positive multiple of 4",
                config.width
            )));
        }
        if config.noise_dim == 0 || config.mel_dim == 0 {
            return Err(Error::InvalidArgument("noise and mel dims must be positive".into()));
        }
        let cond = config.cond.cond_dim();
        let generator = Network::new(
            "gen",
            config.noise_dim + cond,
            config.width,
            config.mel_dim,
            config.placement,
            true,
        )?;
        let discriminator = Network::new(
            "disc",
            config.mel_dim + cond,
            config.width,
            config.mel_dim,
            config.placement,
            false,
        )?;
        Ok(Self {
            config,
            generator,
            discriminator,
            gen_params: ParamStore::new(),
            disc_params: ParamStore::new(),
        })
    }

    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        model.generator.init(&mut model.gen_params, rng)?;
        model.discriminator.init(&mut model.disc_params, rng)?;
        Ok(model)
    }

    pub fn cond_mode(&self) -> CondMode {
        self.config.cond
    }

    /// Validates a condition against the mode and the frame count.
    pub fn check_condition(&self, frames: usize, c: Option<&Array2>) -> Result<()> {
        match (self.config.cond, c) {
            (CondMode::None, None) => Ok(()),
            (CondMode::None, Some(_)) => Err(Error::Condition(
                "free singer takes no condition".into(),
            )),
            (mode, None) => Err(Error::Condition(format!(
                "{} singer needs a condition",
                mode.name()
            ))),
            (mode, Some(c)) => {
                if c.rows() != mode.cond_dim() {
                    Err(Error::Condition(format!(
                        "{} condition must have {} rows, got {}",
                        mode.name(),
                        mode.cond_dim(),
                        c.rows()
                    )))
                } else if c.cols() != frames {
                    Err(Error::Condition(format!(
                        "condition has {} frames, expected {frames}",
                        c.cols()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn with_condition(&self, g: &mut Graph, x: Var, c: Option<Var>) -> Result<Var> {
        match c {
            Some(c) => g.concat_rows(&[x, c]),
            None => Ok(x),
        }
    }

    /// `G(Z, C)` recorded on `g`.
    pub fn generator_forward(&self, g: &mut Graph, z: Var, c: Option<Var>) -> Result<Var> {
        if g.value(z).rows() != self.config.noise_dim {
            return Err(Error::Shape(format!(
                "noise must have {} rows, got {}",
                self.config.noise_dim,
                g.value(z).rows()
            )));
        }
        let input = self.with_condition(g, z, c)?;
        self.generator.forward(g, &self.gen_params, input)
    }

    /// `D(M, C)`: reconstruction of the mel part.
    pub fn discriminator_forward(&self, g: &mut Graph, m: Var, c: Option<Var>) -> Result<Var> {
        if g.value(m).rows() != self.config.mel_dim {
            return Err(Error::Shape(format!(
                "mel input must have {} rows, got {}",
                self.config.mel_dim,
                g.value(m).rows()
            )));
        }
        let input = self.with_condition(g, m, c)?;
        self.discriminator.forward(g, &self.disc_params, input)
    }

    /// `L(M, C)` recorded on `g`.
    pub fn recon_loss_node(&self, g: &mut Graph, m: Var, c: Option<Var>) -> Result<Var> {
        let recon = self.discriminator_forward(g, m, c)?;
        g.mean_abs_diff(recon, m)
    }

    /// Generates a `mel_dim × T` sequence from frame-wise noise `z` (`U × T`).
    pub fn generate(&self, z: &FeatureSeq, c: Option<&FeatureSeq>) -> Result<FeatureSeq> {
        self.check_condition(z.cols(), c)?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone())?;
        let cv = c.map(|c| g.constant(c.clone())).transpose()?;
        let y = self.generator_forward(&mut g, zv, cv)?;
        Ok(g.value(y).clone())
    }

    /// Draws fresh noise for `frames` frames and generates.
    pub fn sample(
        &self,
        rng: &mut RngState,
        frames: usize,
        c: Option<&FeatureSeq>,
    ) -> Result<FeatureSeq> {
        let z = crate::numerics::sample_gaussian(rng, self.config.noise_dim, frames);
        self.generate(&z, c)
    }

    /// `D(M, C)` outside any graph.
    pub fn reconstruct(&self, m: &FeatureSeq, c: Option<&FeatureSeq>) -> Result<FeatureSeq> {
        self.check_condition(m.cols(), c)?;
        let mut g = Graph::new();
        let mv = g.constant(m.clone())?;
        let cv = c.map(|c| g.constant(c.clone())).transpose()?;
        let y = self.discriminator_forward(&mut g, mv, cv)?;
        Ok(g.value(y).clone())
    }

    /// `L(M, C)`, the discriminator's L1 reconstruction error.
    pub fn disc_recon_loss(&self, m: &FeatureSeq, c: Option<&FeatureSeq>) -> Result<f64> {
        if m.rows() != self.config.mel_dim {
            return Err(Error::Shape(format!(
                "mel input must have {} rows, got {}",
                self.config.mel_dim,
                m.rows()
            )));
        }
        reconstruction_loss(&self.reconstruct(m, c)?, m)
    }
}

/// Equilibrium state of BEGAN training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeganState {
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for BeganState {
    fn default() -> Self {
        Self {
            tau: 0.0,
            lambda: 0.001,
            gamma: 0.5,
        }
    }
}

/// `(l_D, l_G) = (lx − τ·lg, lg)`.
pub fn began_losses(state: &BeganState, lx: f64, lg: f64) -> (f64, f64) {
    (lx - state.tau * lg, lg)
}

/// `τ ← clamp(τ + λ(γ·lx − lg), 0, 1)`.
pub fn tau_update(state: &BeganState, lx: f64, lg: f64) -> BeganState {
    let tau = (state.tau + state.lambda * (state.gamma * lx - lg)).clamp(0.0, 1.0);
    BeganState { tau, ..*state }
}

/// BEGAN global convergence measure `lx + |γ·lx − lg|`.
pub fn convergence_metric(lx: f64, lg: f64, gamma: f64) -> f64 {
    lx + (gamma * lx - lg).abs()
}
