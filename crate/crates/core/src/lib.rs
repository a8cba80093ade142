//! Simulation and nonparametric estimation for first- and second-price
//! auctions with independent private values.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod equilibrium;
pub mod error;
pub mod fp;
pub mod fp_partial;
pub mod harness;
pub mod io;
pub mod isotonic;
pub mod numeric;
pub mod rng;
pub mod sim;
pub mod sp;
pub mod sp_partial;
pub mod value;

pub use error::{Error, Result};
