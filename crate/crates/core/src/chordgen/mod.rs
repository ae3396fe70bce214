//! Chord vocabulary, the conditional chord-progression generator and its
//! melody-harmonisation variant.

pub mod leadsheet;
pub mod model;
pub mod train;
pub mod vocab;

pub use leadsheet::{augment_rotate_keys, Beat, GenCondition, Key, LeadSheet, TimeSignature};
pub use model::{matchness, normalize_chroma, ChordGenConfig, ChordGenModel, StepState};
pub use train::{ChordTrainConfig, ChordTrainer};
pub use vocab::{ChordToken, NUM_QUALITIES, NUM_ROOTS, VOCAB_SIZE};
