//! Embedded invariant checks runnable from the command line.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bandits::{command_similarity_matrix, KalmanNoise, KfManb, KfMandb, KfMandbParams, RewardObservation};
use crate::geometry::RobotCommand;
use crate::models::{broyden_update, AdaptiveJacobianState};
use crate::solver::{kkt_residual, solve_ball_constrained_wls, WeightedLeastSquaresProblem};

/// Deliberate faults used to check that the suite detects failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturb one off-diagonal covariance entry of the joint filter.
    KfAsymmetry,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kf-asymmetry" => Ok(Fault::KfAsymmetry),
            _ => Err(format!("unknown fault `{s}` (expected kf-asymmetry)")),
        }
    }
}

type Check = fn(Option<Fault>) -> Result<(), String>;

pub const INVARIANTS: [(&str, Check); 6] = [
    ("solver-kkt", solver_kkt),
    ("kf-reduction", kf_reduction),
    ("kf-covariance-symmetry", kf_covariance_symmetry),
    ("similarity-psd", similarity_psd),
    ("broyden-secant", broyden_secant),
    ("broyden-noop", broyden_noop),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckOutcome> {
    INVARIANTS
        .iter()
        .map(|&(name, check)| CheckOutcome {
            name,
            result: check(fault),
        })
        .collect()
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5e1f_7e57)
}

fn solver_kkt(_: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    for case in 0..200 {
        let points = rng.random_range(1..8);
        let cols = rng.random_range(1..10);
        let j = DMatrix::from_fn(3 * points, cols, |_, _| rng.random_range(-1.0..1.0));
        let t = DVector::from_fn(3 * points, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(points, |_, _| rng.random_range(0.0..2.0));
        let r = rng.random_range(0.01..2.0);
        let p = WeightedLeastSquaresProblem::new(j, t, w, r).map_err(|e| e.to_string())?;
        let x = solve_ball_constrained_wls(&p).map_err(|e| e.to_string())?;
        let res = kkt_residual(&p, &x);
        if res.is_nan() || res >= 1e-6 || x.norm() > r * (1.0 + 1e-12) {
            return Err(format!("case {case}: KKT residual {res:e}, |x| = {} > r = {r}", x.norm()));
        }
    }
    Ok(())
}

fn kf_reduction(_: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    let noise = KalmanNoise {
        transition: 0.3,
        observation: 0.7,
    };
    for case in 0..50 {
        let arms = rng.random_range(1..6);
        let eta: f64 = rng.random_range(0.1..2.0);
        let mut joint = KfMandb::new(arms, KfMandbParams { noise, correlation: 0.0 }, 4.0);
        let mut scalar = KfManb::new(arms, noise, 0.0, 4.0);
        let sim = DMatrix::from_fn(arms, arms, |i, j| if i == j { 1.0 } else { 0.5 });
        for _ in 0..30 {
            let obs = RewardObservation {
                arm: rng.random_range(0..arms),
                reward: rng.random_range(-1.0..1.0),
            };
            joint.predict(&sim, eta).map_err(|e| e.to_string())?;
            joint.correct(obs, eta).map_err(|e| e.to_string())?;
            scalar.update_scaled(obs, eta * eta);
        }
        for j in 0..arms {
            let dm = (joint.mean()[j] - scalar.means()[j]).abs();
            let dv = (joint.covariance()[(j, j)] - scalar.variances()[j]).abs();
            if dm > 1e-9 || dv > 1e-9 {
                return Err(format!("case {case}, arm {j}: mean diff {dm:e}, variance diff {dv:e}"));
            }
        }
    }
    Ok(())
}

fn kf_covariance_symmetry(fault: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    let m = 4;
    let params = KfMandbParams {
        noise: KalmanNoise {
            transition: 0.1,
            observation: 0.01,
        },
        correlation: 0.9,
    };
    let mut filter = KfMandb::new(m, params, 1e6);
    for _ in 0..1000 {
        let vectors: Vec<_> = (0..m).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let sim = crate::bandits::vector_similarity_matrix(&vectors);
        filter.predict(&sim, 0.5).map_err(|e| e.to_string())?;
        let obs = RewardObservation {
            arm: rng.random_range(0..m),
            reward: rng.random_range(-1.0..1.0),
        };
        filter.correct(obs, 0.5).map_err(|e| e.to_string())?;
    }
    if fault == Some(Fault::KfAsymmetry) {
        filter.covariance_mut_unchecked()[(0, 1)] += 1e-3;
    }
    let c = filter.covariance();
    let asym = (c - c.transpose()).amax();
    if asym > 1e-10 {
        return Err(format!("covariance asymmetry {asym:e}"));
    }
    let min_eig = c.clone().symmetric_eigen().eigenvalues.min();
    if min_eig.is_nan() || min_eig <= 0.0 {
        return Err(format!("covariance minimum eigenvalue {min_eig:e}"));
    }
    Ok(())
}

fn similarity_psd(_: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    for case in 0..200 {
        let count = rng.random_range(1..10);
        let grippers = rng.random_range(1..3);
        let commands: Vec<_> = (0..count)
            .map(|_| RobotCommand::from_vector(&DVector::from_fn(6 * grippers, |_, _| rng.random_range(-1.0..1.0))))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let s = command_similarity_matrix(&commands, 0.0025);
        let asym = (&s - s.transpose()).amax();
        let diag = (0..count).map(|i| (s[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
        let min_eig = s.symmetric_eigen().eigenvalues.min();
        if asym > 0.0 || diag > 0.0 || min_eig < -1e-10 {
            return Err(format!("case {case}: asymmetry {asym:e}, diagonal error {diag:e}, min eigenvalue {min_eig:e}"));
        }
    }
    Ok(())
}

fn random_state(rng: &mut ChaCha8Rng, rate: f64) -> Result<(AdaptiveJacobianState, usize, usize), String> {
    let rows = rng.random_range(1..10);
    let cols = rng.random_range(1..8);
    let j = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    Ok((AdaptiveJacobianState::new(j, rate).map_err(|e| e.to_string())?, rows, cols))
}

fn broyden_secant(_: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    for case in 0..200 {
        let (state, rows, cols) = random_state(&mut rng, 1.0)?;
        let q = DVector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
        let p = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        let (next, _) = broyden_update(&state, &q, &p).map_err(|e| e.to_string())?;
        let err = (&next.jacobian * &q - &p).amax();
        if err > 1e-10 {
            return Err(format!("case {case}: secant residual {err:e}"));
        }
    }
    Ok(())
}

fn broyden_noop(_: Option<Fault>) -> Result<(), String> {
    let mut rng = rng();
    for case in 0..200 {
        let rate = rng.random_range(0.01..1.0);
        let (state, _, cols) = random_state(&mut rng, rate)?;
        let q = DVector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
        let p = &state.jacobian * &q;
        let (next, _) = broyden_update(&state, &q, &p).map_err(|e| e.to_string())?;
        if next.jacobian != state.jacobian {
            return Err(format!("case {case}: zero-residual update changed the Jacobian"));
        }
    }
    Ok(())
}
