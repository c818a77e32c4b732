#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod quadrature;
pub mod simulate;
pub mod switching;

pub use error::{Error, Result};
