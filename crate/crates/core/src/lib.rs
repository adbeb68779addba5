//! Simulation and property checks for holomorphic foliations near linearizable
//! singularities: the local linear model, leafwise metrics, leafwise Brownian
//! motion, the holonomy cocycle and Lyapunov estimation.

// `!(x > 0.0)` is used on purpose to reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod complex;
pub mod config;
pub mod error;
pub mod holonomy;
pub mod linear_model;
pub mod lyapunov;
pub mod metrics;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
