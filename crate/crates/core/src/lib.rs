//! Rotation-invariant point cloud learning.
//!
//! Points are described in local reference frames built from their
//! neighborhoods; features from different frames are aligned before they
//! are fused by edge convolution. The crate contains the geometric kernels,
//! a small reverse-mode autodiff engine, the hierarchical network, synthetic
//! datasets and the command-line driver.

pub mod aecnn;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod lrf;
pub mod neighbors;

pub use error::{Error, Result};
