//! Learned quasi-static mesh simulator built around a scalable graph U-net,
//! with checkpoint surgery for transferring pre-trained processors between
//! differently sized networks and a small linear-elastic FEM data generator.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod meshgraph;
pub mod pooling;
pub mod sgunet;
pub mod simgen;
pub mod tensor;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
