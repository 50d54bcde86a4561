//! Document-level relation extraction with explicit syntax refinement and
//! subsentence modelling.
//!
//! The model encodes a marked document, refines token states with a graph
//! attention stack over dependency parses, composes constituency subtrees
//! with a child-sum Tree-LSTM, fuses the resulting subsentence states into
//! entity, context and sentence embeddings, and scores relations with an
//! adaptive threshold class next to a per-sentence evidence head.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dep_refinement;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod params;
pub mod selftest;
pub mod subsentence;
pub mod syntax;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
