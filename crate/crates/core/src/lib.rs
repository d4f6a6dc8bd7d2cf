//! Distribution-controlled multi-type style disentanglement for text.
//!
//! The library couples a recurrent sequence autoencoder with trainable
//! Gaussian distributions, one per style value. The autoencoder latent is
//! split into one style vector per style type plus a content vector, and a
//! set of loss functions ties each style vector to its labeled value
//! distribution, keeps content free of style information, and decorrelates
//! the style types from each other. Style transfer then amounts to sampling
//! a replacement vector from the target value's distribution and decoding.
//!
//! Modules:
//! - [`corpus`]: datasets, vocabulary, lexicons, synthetic corpus generation
//! - [`style_space`]: Gaussian machinery over latent style/content spaces
//! - [`tape`]: reverse-mode automatic differentiation used by training
//! - [`seqae`]: the LSTM sequence autoencoder (vanilla and variational)
//! - [`losses`]: the training objectives and their weighted total
//! - [`trainer`]: optimization loop, checkpointing, determinism
//! - [`transfer`]: inference-time sample-and-replace style transfer
//! - [`evalkit`]: transfer metrics, probes, bias measurement, exports

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod linalg;
pub mod losses;
pub mod real;
pub mod rng;
pub mod seqae;
pub mod style_space;
pub mod tape;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
pub use real::{Precision, Real};
