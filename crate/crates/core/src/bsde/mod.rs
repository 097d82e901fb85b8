//! Explicit backward Euler for mean-field BSDEs with least-squares
//! conditional expectations.

mod generator;
mod regression;
mod solver;

pub use generator::{check_growth, check_lipschitz, Generator, GeneratorEval, GeneratorKind, GeneratorMode, Law, SpotCheck};
pub use regression::{Projector, RegressionConfig, ZMode};
pub use solver::{
    backward_sweep, constant_driver_path, solve_bsde, BSDESolution, Driver, FrozenDriver, MeanForce, YFrozenDriver,
};
