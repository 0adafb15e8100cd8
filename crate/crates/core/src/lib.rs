//! Cooperative selective rationalization.
//!
//! A generator reads the full text and picks a binary token mask; a predictor
//! classifies from the masked text only. Both halves may run on separate
//! bidirectional GRU encoders (the classic two-phase setup) or share some or
//! all encoder layers, in which case the predictor is implicitly regularized
//! by the generator's view of the full input.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] loads corpora, vocabularies and word vectors, and synthesizes
//!   planted-rationale corpora.
//! * [`model`] holds parameters and the forward/backward computation.
//! * [`objective`] implements the predictive loss and the sparsity/coherence
//!   regularizer.
//! * [`training`] runs joint training, learning-rate grids and the skewed
//!   pretraining protocols.
//! * [`evaluation`] scores rationales and runs representation probes.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
