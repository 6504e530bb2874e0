//! Dense-tensor numerics with reverse-mode gradients.
//!
//! The tape ([`graph::Graph`]) records every forward operation and replays
//! the recording in reverse to accumulate gradients. Layer primitives live
//! in [`nn`], the optimizer in [`optim`], and the finite-difference checker
//! in [`gradcheck`]. Everything is generic over [`Scalar`] so training runs
//! in single precision while gradient checking runs the identical code in
//! double precision.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
mod scalar;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{Aggregate, Grads, Graph, Tensor};
pub use nn::{
    cross_entropy, dropout, mlp_forward, softmax, AffineLayer, BatchNorm, ForwardCtx, Mode,
    NormAct, Param, ParamVisitor,
};
pub use optim::{sgd_cosine_step, OptimizerState};
pub use scalar::Scalar;
