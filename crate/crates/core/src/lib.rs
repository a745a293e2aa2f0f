//! The q-Ornstein–Uhlenbeck process: special-function products, explicit
//! stationary and transition densities, an inverse-CDF path sampler, big-jump
//! counting and the numerical experiments built on them.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod error;
pub mod experiments;
pub mod jumps;
pub mod numerics;
pub mod qseries;
pub mod sampler;

pub use error::{Error, Result};
