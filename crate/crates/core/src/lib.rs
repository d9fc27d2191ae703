#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Sphere and box resonator models realised as feedback delay networks.

pub mod acoustics;
pub mod allpass;
pub mod analysis;
pub mod bessel;
pub mod cli;
pub mod config;
pub mod design;
pub mod error;
pub mod fdn;
pub mod wav;

pub use error::{Error, Result};
