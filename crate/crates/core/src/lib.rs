//! Mean-reflected backward stochastic differential equations with two
//! nonlinear mean constraints, solved by particle Monte Carlo.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the usual double-precision instantiation.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod constraints;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod mrbsde;
pub mod penalty;
pub mod scalar;
pub mod skorokhod;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TimeGrid64 = grid::TimeGrid<f64>;
pub type SamplePath64 = grid::SamplePath<f64>;
pub type Ensemble64 = grid::Ensemble<f64>;
pub type LossPair64 = constraints::LossPair<f64>;
pub type Generator64 = bsde::Generator<f64>;
pub type Scenario64 = mrbsde::Scenario<f64>;
pub type MRSolution64 = mrbsde::MRSolution<f64>;
pub type PenaltySolution64 = penalty::PenaltySolution<f64>;
pub type ReflectionSolution64 = skorokhod::ReflectionSolution<f64>;

pub type TimeGrid32 = grid::TimeGrid<f32>;
pub type Ensemble32 = grid::Ensemble<f32>;
pub type Scenario32 = mrbsde::Scenario<f32>;
