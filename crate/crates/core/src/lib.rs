//! Bandit-based selection among approximate Jacobian deformation models.
//!
//! A set of deformation models is treated as the arms of a non-stationary,
//! dependent multi-armed bandit. At every control step one model is chosen
//! to turn a desired object motion into a gripper command; the resulting
//! reduction in task error is the reward.
//!
//! Module map:
//! - [`geometry`]: gripper poses, twists and the scaled twist inner product
//! - [`solver`]: ball-constrained weighted least squares
//! - [`models`]: deformation model interface plus diminishing-rigidity,
//!   adaptive (Broyden) and constant Jacobian models
//! - [`bandits`]: UCB1-Normal, KF-MANB and the joint-filter KF-MANDB
//! - [`controller`]: desired-motion terms, obstacle repulsion, main loop
//! - [`benchmarks`]: synthetic regret trials and the toy kinematic world
//! - [`cli`]: configuration, orchestration, CSV/JSON output and self-test

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod bandits;
pub mod benchmarks;
pub mod cli;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod models;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
