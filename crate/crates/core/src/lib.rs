//! Robust process regression for batch functional data.
//!
//! Each group of curves shares a latent signal drawn from a Gaussian or
//! extended t-process, and every curve carries its own independent Gaussian
//! or extended t-process error. Parameters are estimated by maximizing an
//! adjusted profile h-likelihood.

pub mod error;
pub mod kernel;
pub mod commands;
pub mod estimate;
pub mod io;
pub mod model;
pub mod predict;
pub mod simulate;

pub use error::{Error, Result};
