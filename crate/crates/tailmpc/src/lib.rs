//! Desk-scale workbench for hover-regime control of a thrust-vectoring
//! tail-sitter UAV.
//!
//! The crate bundles a synthetic-truth flight simulator, a flight-data
//! pipeline that reconstructs residual accelerations from logged motion,
//! a small fully connected network trained with Levenberg-Marquardt to
//! model those residuals, a multiple-shooting MPC that can run either a
//! quadratic-drag model or the hybrid model with the learned residual
//! term, classical baseline controllers, and an experiment harness that
//! drives all of it from a CLI.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod logio;
pub mod mlp;
pub mod mpc;
pub mod pipeline;
pub mod plant;
pub mod qp;
pub mod traj;
pub mod types;

pub use error::{Error, Result};
