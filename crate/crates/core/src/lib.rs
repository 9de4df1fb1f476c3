//! Normalized robust losses and active/passive loss combinations for
//! training classifiers on noisy labels.
//!
//! The crate covers the whole path from closed-form loss and gradient
//! kernels, through label-noise injection and desk-scale MLP training, to
//! exact-enumeration checks of the noise-tolerance identities that make
//! normalized losses robust.

pub mod datasets;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod losses;
pub mod network;
pub mod noise;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
pub use losses::{Activity, AplSpec, Loss, LossFamily, LossSpec};
pub use numerics::{LogitVector, ProbVector, Rng};
