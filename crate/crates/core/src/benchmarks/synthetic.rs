//! Underactuated linear systems `y' = J x'` with noisy constant-Jacobian
//! models as arms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::bandits::{anneal_eta, compute_reward, vector_similarity_matrix, Algorithm, Bandit, BanditParams, RewardObservation};
use crate::controller::StepRecord;
use crate::error::{Error, Result};
use crate::models::{noisy_constant_models, perturb_uniform, ConstantJacobianModel};
use crate::rng::StreamRng;
use crate::solver::NormalEquations;

/// Every state coordinate starts here; the target is the origin.
pub const INITIAL_STATE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSystem {
    jacobian: DMatrix<f64>,
    state: DVector<f64>,
}

impl SyntheticSystem {
    pub fn new(jacobian: DMatrix<f64>, state: DVector<f64>) -> Result<Self> {
        let (n, m) = jacobian.shape();
        if m >= n {
            return Err(Error::Config(format!("system must be underactuated, got n = {n}, m = {m}")));
        }
        if state.len() != n {
            return Err(Error::dim(format!("state has {} entries for n = {n}", state.len())));
        }
        Ok(Self { jacobian, state })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn n(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn m(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn error(&self) -> f64 {
        self.state.norm()
    }

    pub fn step(&mut self, command: &DVector<f64>) {
        self.state.gemv(1.0, &self.jacobian, command, 1.0);
    }
}

/// `J = [I; 0] + U(-h, h)` and `y = (10, ..., 10)`.
pub fn make_synthetic_system(n: usize, m: usize, half_width: f64, rng: &mut impl Rng) -> Result<SyntheticSystem> {
    if m >= n || m == 0 {
        return Err(Error::Config(format!("need 0 < m < n, got n = {n}, m = {m}")));
    }
    let base = DMatrix::from_fn(n, m, |i, j| if i == j { 1.0 } else { 0.0 });
    SyntheticSystem::new(perturb_uniform(&base, half_width, rng), DVector::from_element(n, INITIAL_STATE))
}

pub fn make_synthetic_models(
    system: &SyntheticSystem,
    count: usize,
    half_width: f64,
    rng: &mut impl Rng,
) -> Vec<ConstantJacobianModel> {
    noisy_constant_models(system.jacobian(), count, half_width, rng)
}

/// How the arm is chosen each pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Bandit(Algorithm),
    /// Always the arm with the largest one-step reward.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub initial_error: f64,
    pub steps: Vec<StepRecord>,
}

impl TrialRecord {
    pub fn total_regret(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_regret)
    }

    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(self.initial_error, |s| s.error)
    }
}

/// Per-model quantities that stay fixed during a trial.
struct ArmCache {
    normal: NormalEquations,
    /// `J_m^T J_true`.
    coupling: DMatrix<f64>,
}

/// A system and model set prepared for repeated trials. Each arm's
/// right-hand side `J_m^T (-y)` is advanced incrementally, and candidate
/// rewards are evaluated through `J_true^T J_true` without touching `y`.
pub struct SyntheticTrial<'a> {
    system: &'a SyntheticSystem,
    arms: Vec<ArmCache>,
    initial_rhs: Vec<DVector<f64>>,
    true_gram: DMatrix<f64>,
}

impl<'a> SyntheticTrial<'a> {
    pub fn new(system: &'a SyntheticSystem, models: &[ConstantJacobianModel]) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("model set is empty".into()));
        }
        let truth = system.jacobian();
        let mut arms = Vec::with_capacity(models.len());
        let mut initial_rhs = Vec::with_capacity(models.len());
        for model in models {
            let jm = model.matrix();
            if jm.shape() != truth.shape() {
                return Err(Error::dim(format!(
                    "model is {}x{}, system is {}x{}",
                    jm.nrows(),
                    jm.ncols(),
                    truth.nrows(),
                    truth.ncols()
                )));
            }
            arms.push(ArmCache {
                normal: NormalEquations::from_gram(jm.tr_mul(jm))?,
                coupling: jm.tr_mul(truth),
            });
            initial_rhs.push(-jm.tr_mul(system.state()));
        }
        Ok(Self {
            system,
            arms,
            initial_rhs,
            true_gram: truth.tr_mul(truth),
        })
    }

    pub fn arms(&self) -> usize {
        self.arms.len()
    }

    pub fn run(&self, policy: Policy, pulls: usize, max_velocity: f64, params: BanditParams, rng: &mut StreamRng) -> Result<TrialRecord> {
        let mut system = self.system.clone();
        let mut rhs = self.initial_rhs.clone();
        let mut bandit = match policy {
            Policy::Bandit(a) => Some(Bandit::new(a, self.arms(), params)?),
            Policy::Oracle => None,
        };
        let calls_per_step = match policy {
            Policy::Bandit(a) if !a.uses_similarity() => 1,
            _ => self.arms() as u64,
        };
        let initial_error = system.error();
        let mut eta = 1.0;
        let mut cum_regret = 0.0;
        let mut steps = Vec::with_capacity(pulls);
        for step in 0..pulls {
            let rho = system.error();
            let gradient = system.jacobian().tr_mul(system.state());
            let commands = self
                .arms
                .iter()
                .zip(&rhs)
                .map(|(arm, b)| arm.normal.solve(b, max_velocity).map(|s| s.x))
                .collect::<Result<Vec<_>>>()?;
            let predicted: Vec<f64> = commands
                .iter()
                .map(|x| {
                    let sq = rho * rho + 2.0 * gradient.dot(x) + x.dot(&(&self.true_gram * x));
                    rho - sq.max(0.0).sqrt()
                })
                .collect();

            let arm = match &bandit {
                Some(b) => b.select(rng),
                None => crate::bandits::argmax(&predicted),
            };
            let x = &commands[arm];
            system.step(x);
            for (b, cache) in rhs.iter_mut().zip(&self.arms) {
                b.gemv(-1.0, &cache.coupling, x, 1.0);
            }
            let error = system.error();
            let reward = compute_reward(rho, error);
            if !reward.is_finite() {
                return Err(Error::Numerical(format!("non-finite reward at pull {step}")));
            }
            let best_reward = predicted
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != arm)
                .map(|(_, r)| *r)
                .fold(reward, f64::max);
            cum_regret += best_reward - reward;

            eta = anneal_eta(eta, reward);
            if let Some(b) = &mut bandit {
                let similarity = b.algorithm().uses_similarity().then(|| vector_similarity_matrix(&commands));
                b.update(RewardObservation { arm, reward }, eta, similarity.as_ref())?;
            }
            steps.push(StepRecord {
                step,
                arm,
                reward,
                best_reward,
                error,
                eta,
                cum_regret,
                solver_calls: calls_per_step,
                min_obstacle_distance: f64::INFINITY,
            });
        }
        Ok(TrialRecord { initial_error, steps })
    }
}

/// One trial of `pulls` steps with the given selection policy.
pub fn run_synthetic_trial(
    system: &SyntheticSystem,
    models: &[ConstantJacobianModel],
    policy: Policy,
    pulls: usize,
    max_velocity: f64,
    params: BanditParams,
    rng: &mut StreamRng,
) -> Result<TrialRecord> {
    if pulls == 0 {
        return Err(Error::Config("a trial needs at least one pull".into()));
    }
    SyntheticTrial::new(system, models)?.run(policy, pulls, max_velocity, params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandits::KalmanNoise;
    use crate::rng::TrialSeeds;

    fn params() -> BanditParams {
        BanditParams {
            noise: KalmanNoise {
                transition: 1.0,
                observation: 1.0,
            },
            correlation: 0.9,
        }
    }

    #[test]
    fn system_construction() {
        let seeds = TrialSeeds::for_trial(3, 0);
        let s = make_synthetic_system(3, 2, 0.1, &mut seeds.system()).unwrap();
        let base = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((s.jacobian() - &base).amax() <= 0.1);
        assert_eq!(s.state(), &DVector::from_element(3, 10.0));
        let again = make_synthetic_system(3, 2, 0.1, &mut seeds.system()).unwrap();
        assert_eq!(s, again);

        let exact = make_synthetic_system(3, 2, 0.0, &mut seeds.system()).unwrap();
        assert_eq!(exact.jacobian(), &base);
        assert!(make_synthetic_system(2, 2, 0.1, &mut seeds.system()).is_err());
    }

    #[test]
    fn model_construction() {
        let seeds = TrialSeeds::for_trial(3, 0);
        let s = make_synthetic_system(3, 2, 0.1, &mut seeds.system()).unwrap();
        let models = make_synthetic_models(&s, 10, 0.025, &mut seeds.models());
        assert_eq!(models.len(), 10);
        for m in &models {
            assert_eq!(m.matrix().shape(), (3, 2));
            assert!((m.matrix() - s.jacobian()).amax() <= 0.025);
        }
        assert_eq!(models, make_synthetic_models(&s, 10, 0.025, &mut seeds.models()));
    }

    #[test]
    fn regret_is_zero_for_oracle_single_arm_and_perfect_models() {
        let seeds = TrialSeeds::for_trial(5, 0);
        let s = make_synthetic_system(3, 2, 0.1, &mut seeds.system()).unwrap();
        let models = make_synthetic_models(&s, 10, 0.025, &mut seeds.models());
        let oracle = run_synthetic_trial(&s, &models, Policy::Oracle, 200, 0.1, params(), &mut seeds.selection()).unwrap();
        assert_eq!(oracle.total_regret(), 0.0);

        for a in Algorithm::ALL {
            let single = run_synthetic_trial(&s, &models[..1], Policy::Bandit(a), 200, 0.1, params(), &mut seeds.selection()).unwrap();
            assert_eq!(single.total_regret(), 0.0);
            let perfect = make_synthetic_models(&s, 10, 0.0, &mut seeds.models());
            let run = run_synthetic_trial(&s, &perfect, Policy::Bandit(a), 200, 0.1, params(), &mut seeds.selection()).unwrap();
            assert!(run.total_regret().abs() < 1e-9, "{}", run.total_regret());
        }
    }

    #[test]
    fn regret_is_monotone_and_error_shrinks() {
        let seeds = TrialSeeds::for_trial(8, 0);
        let s = make_synthetic_system(12, 4, 0.1, &mut seeds.system()).unwrap();
        let models = make_synthetic_models(&s, 20, 0.025, &mut seeds.models());
        for a in Algorithm::ALL {
            let rec = run_synthetic_trial(&s, &models, Policy::Bandit(a), 300, 0.1, params(), &mut seeds.selection()).unwrap();
            let mut prev = 0.0;
            for step in &rec.steps {
                assert!(step.best_reward >= step.reward);
                assert!(step.cum_regret >= prev);
                prev = step.cum_regret;
            }
            assert!(rec.final_error() < rec.initial_error);
        }
    }

    #[test]
    fn incremental_rhs_matches_direct_projection() {
        let seeds = TrialSeeds::for_trial(9, 0);
        let s = make_synthetic_system(30, 5, 0.1, &mut seeds.system()).unwrap();
        let models = make_synthetic_models(&s, 4, 0.025, &mut seeds.models());
        let trial = SyntheticTrial::new(&s, &models).unwrap();
        let mut sys = s.clone();
        let mut rhs = trial.initial_rhs.clone();
        let mut rng = seeds.selection();
        for _ in 0..100 {
            let x = DVector::from_fn(5, |_, _| rng.random_range(-0.1..0.1));
            sys.step(&x);
            for (b, cache) in rhs.iter_mut().zip(&trial.arms) {
                b.gemv(-1.0, &cache.coupling, &x, 1.0);
            }
        }
        for (b, m) in rhs.iter().zip(&models) {
            assert!((b + m.matrix().tr_mul(sys.state())).amax() < 1e-10);
        }
    }
}
