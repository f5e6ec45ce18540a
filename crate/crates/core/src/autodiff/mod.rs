//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as it executes. Parameters enter the
//! tape by reference to their [`ParamStore`](crate::params::ParamStore), so a
//! forward pass never copies embedding tables. [`Tape::backward`] walks the
//! record in reverse and returns [`Gradients`] keyed by [`ParamKey`].

mod ops;
mod tape;

pub use tape::{Gradients, ParamKey, Tape, Var};

/// ELU slope for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;
/// LeakyReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Lower clamp applied to probabilities before taking logs in `kl_div`.
pub const KL_FLOOR: f64 = 1e-12;
