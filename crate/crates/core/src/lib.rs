//! Score- and lyrics-free singing voice generation.
//!
//! A G3BEGAN singer (GRU / grouped dilated conv / group norm blocks trained
//! as a boundary-equilibrium GAN over mel-spectrogram sequences), the chord
//! generator and melody-harmonisation model, the audio feature pipeline and
//! the objective metrics used to judge generated singing.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod evalmetrics;
pub mod features;
pub mod chordgen;
pub mod g3began;
pub mod gradsuite;
pub mod layers;
pub mod numerics;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
