//! Training-dynamics instrumentation for tiny vision transformers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
