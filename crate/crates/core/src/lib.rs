//! Semi- and weakly-supervised speech recognition training on synthetic data.
//!
//! The crate bundles a small recurrent encoder/decoder substrate with
//! hand-written gradients ([`nn`]), a synthetic corpus generator and
//! augmentations ([`corpus`]), training objectives ([`losses`]), decoding and
//! scoring ([`decode`]), self-labeling machinery ([`distill`]), weak
//! supervision from metadata ([`weaksup`]) and three-phase training
//! orchestration ([`trainer`]).
//!
//! Model math is generic over the scalar type (see [`Scalar`]); the aliases
//! below fix the 32-bit parameter type used for training and checkpoints and
//! the 64-bit type used by gradient checks.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod distill;
pub mod error;
pub mod losses;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod trainer;
pub mod weaksup;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Parameter store with 32-bit values, the training and on-disk precision.
pub type ParamSet = nn::ParamStore<f32>;
/// Parameter store with 64-bit values, used for finite-difference checks.
pub type ParamSet64 = nn::ParamStore<f64>;
/// Row-major matrix of 32-bit reals.
pub type Mat = nn::Matrix<f32>;
/// Row-major matrix of 64-bit reals.
pub type Mat64 = nn::Matrix<f64>;
/// Model bundle at training precision.
pub type Model = nn::ModelBundle<f32>;
/// Model bundle at check precision.
pub type Model64 = nn::ModelBundle<f64>;
/// Token ids (character units).
pub type TokenSequence = Vec<u32>;
