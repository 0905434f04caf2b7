//! Coded-exposure fly-scan CT.
//!
//! A fly-scan view integrates `K` closely spaced micro-projections; a binary
//! exposure code switches the flux on and off across those chops. This crate
//! simulates such acquisitions and reconstructs them with an ADMM loop that
//! alternates projection-domain deblurring with regularized tomographic
//! reconstruction.

pub mod acquisition;
pub mod admm;
pub mod baselines;
pub mod deblur;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod phantom;
pub mod prior;
pub mod projector;
pub mod sampling;
pub mod sinogram;
pub mod tomo;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/acquisition.md")]
    mod acquisition {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
