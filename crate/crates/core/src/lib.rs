#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod analytic;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noise;
pub mod norm;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
