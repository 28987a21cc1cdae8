//! Lightweight pretrained scorer for ranking and selecting outputs of a
//! frozen, black-box instruction-following generator.
//!
//! The pipeline: build weakly supervised (instruction, response, score)
//! regression data ([`construct`]), train a hashed-feature scorer on it
//! ([`scorer`]), and use the scorer to pick among predefined choices or
//! sampled candidates ([`select`]). [`eval`] wires the pieces into
//! reproducible experiments.

pub mod construct;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod genclient;
pub mod hashing;
pub mod http;
pub mod rouge;
pub mod scorer;
pub mod select;

pub use error::{Error, Result};
pub use rouge::{rouge_l, tokenize, RougeScore};
pub use scorer::{Score, Scorer, ScorerModel};
