pub mod dsp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod feature;
pub mod fusion;
pub mod harness;
pub mod lyrics;
pub mod nn;
pub mod rhythm;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
