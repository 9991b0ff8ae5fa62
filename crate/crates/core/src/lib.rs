//! Multi-omics classification by contrastive alignment and unrolled
//! multiplex graph optimization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod attention;
pub mod cli;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod fsutil;
pub mod graphopt;
pub mod model;

pub use error::{Error, Result};
