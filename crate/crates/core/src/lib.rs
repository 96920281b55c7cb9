//! Distributed primal-dual subgradient methods for constrained convex
//! optimization over networks, built on a regularized Lagrangian.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod graph;
pub mod lagrangian;
pub mod linalg;
pub mod metrics;
pub mod problem;
pub mod verify;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
