pub mod chordgen;
pub mod evaluate;
pub mod generate;
pub mod gradcheck;
pub mod prepare;
pub mod toy;
pub mod train;
