//! Clause recommendation: given an in-draft contract and a clause type,
//! generate a clause of that type.
//!
//! The pipeline averages clause embeddings into contract, clause-type and
//! similar-contract representations, assembles a conditioning context under
//! one of five strategies, trains a small transformer decoder on it, and
//! scores generations with BLEU and ROUGE.

pub mod corpus;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod representation;
pub mod simindex;
pub mod strategy;
pub mod synthetic;
pub mod tokenizer;

pub use error::{Error, Result};
