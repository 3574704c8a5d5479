//! Heart sound classification toolkit.
//!
//! End-to-end pipeline for three-class phonocardiogram classification:
//! log-Mel feature extraction from WAV recordings, CNN and LSTM/GRU models
//! with global attention pooling on a small reverse-mode autodiff engine,
//! Adam training with a decaying schedule, and recall/ROC evaluation with
//! significance testing.

pub mod autodiff;
pub mod error;
pub mod tensor;

pub use autodiff::{grad_check, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
