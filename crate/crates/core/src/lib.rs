//! Constraint-aware recipe editing.
//!
//! A base recipe plus a dietary constraint goes in; an edited ingredient set
//! and freshly generated directions come out. The crate contains the data
//! pipeline that builds base/target pairs from a recipe corpus, a rule-based
//! substitution baseline with banned-ingredient checks, a small reverse-mode
//! autodiff engine with transformer blocks, the set-pooled ingredient editor,
//! the copy-attention step generator, and the evaluation metrics.

pub mod cli;
pub mod constraint;
pub mod corpus;
pub mod editor;
pub mod error;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod rng;
pub mod rules;
pub mod synth;
pub mod text;
pub mod trie;
pub mod words;

pub use constraint::{ConstraintId, ConstraintKind, ConstraintSet, ConstraintSpec};
pub use error::{Error, Result};
