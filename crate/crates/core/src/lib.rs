//! Domain-adversarial training for token-level event trigger identification.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs plus an explicit seed: corpus transforms, feature
//! encoding, the recurrent taggers with hand-derived backward passes, the
//! gradient reversal objective, supervised/adversarial/FEDA training,
//! finetuning, self-training and token-level scoring. File formats, configs
//! and the command line live in the `evadapt` companion crate.
#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod nets;
pub mod optim;
pub mod seed;
pub mod selftrain;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
