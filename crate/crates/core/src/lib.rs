//! Dual-neighborhood point cloud learning operators.
//!
//! The crate provides the pieces of a dual-neighborhood fusion classifier
//! for 3-D point clouds:
//!
//! - [`numerics`] — a small dense-tensor tape with reverse-mode gradients,
//!   the layer primitives the network needs, SGD with momentum under cosine
//!   annealing, and a finite-difference gradient checker.
//! - [`neighborhood`] — exact k-nearest-neighbor, ball-query, and
//!   farthest-point-sampling searches over 3-D point sets.
//! - [`dual`] — learned relation descriptors, the relationship coefficient
//!   matrix, adaptive key-neighbor selection with softmax transfer weights,
//!   information-transfer convolutions, and the dual-branch fusion encoder.
//! - [`network`] — the full four-layer classifier with hierarchical
//!   downsampling and a fully connected head.
//! - [`data`] — synthetic shape-primitive datasets, point-cloud file IO,
//!   and augmentation.

pub mod data;
pub mod dual;
pub mod error;
pub mod neighborhood;
pub mod network;
pub mod numerics;

pub use error::{Error, Result};
