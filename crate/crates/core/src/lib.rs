//! Content-steered summarization on a desk-scale seq2seq transformer.
//!
//! The crate bundles everything needed to study relevance-attention
//! steering end to end without external models or datasets:
//!
//! - [`numerics`]: dense tensors with tape-based reverse-mode gradients
//! - [`text`]: tokenization, vocabulary, JSONL corpora, a synthetic
//!   controllable-summarization corpus generator
//! - [`model`]: a tiny encoder-decoder transformer with an override point
//!   in its cross-attention
//! - [`relevance`]: relevance attention over source tokens, Gaussian
//!   smoothing, blend weights, and the per-head weight predictor
//! - [`metrics`]: ROUGE variants and the candidate-filter statistics
//! - [`selection`]: per-example online selection of the control weight
//! - [`training`]: backbone pretraining and few-shot adaptation
//! - [`eval`]: evaluation reports, degree-of-control bins, attention traces

pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod relevance;
pub mod text;

pub use error::{Error, Result};
