//! Inductive relation prediction on knowledge graphs with single-source
//! edge-wise message passing.
//!
//! The crate is organized bottom-up:
//!
//! - [`kg`]: triple files, vocabularies and the inverse-augmented graph.
//! - [`subgraph`]: k-hop enclosing/unclosing extraction around a query triple.
//! - [`rule_algebra`]: exact semiring form of the message-passing recursion and
//!   the closed-walk oracle it is checked against.
//! - [`autodiff`]: reverse-mode tape over dense `f64` tensors.
//! - [`model`]: parameters and the edge-wise forward pass.
//! - [`trainer`], [`evaluator`], [`checkpoint`]: training loop, filtered
//!   ranking and the binary checkpoint format.
//! - [`rules`]: rule bodies scored as cycles by a trained model.
//! - [`bench`], [`synthetic`]: extraction timing and generated datasets.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod evaluator;
pub mod kg;
pub mod model;
pub mod rules;
pub mod rule_algebra;
pub mod subgraph;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
