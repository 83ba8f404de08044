//! File formats, the synthetic phantom generator, the repeated experiment
//! harness and the command-line frontend around [`hpotts_core`].

pub mod cli;
pub mod docs;
pub mod error;
pub mod experiment;
pub mod pgm;
pub mod phantom;
pub mod tensor;

pub use error::{Error, Result};
