//! Arm-selection algorithms over deformation models.
//!
//! All three algorithms share the same interface through [`Bandit`]: pick an
//! arm, then feed back the reward for that arm. KF-MANDB additionally needs
//! the similarity of the arms' commands for its process step, and the noise
//! scale `eta` that is annealed from observed rewards.

mod kalman;
mod similarity;
mod ucb1;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use kalman::{KalmanNoise, KfManb, KfMandb, KfMandbParams, JITTER_SCALE, MAX_JITTER_ATTEMPTS};
pub use similarity::{command_similarity_matrix, cosine_from_gram, vector_similarity_matrix, MIN_COMMAND_NORM};
pub use ucb1::Ucb1Normal;

use crate::error::{Error, Result};

/// Floor on the annealed noise scale.
pub const ETA_FLOOR: f64 = 1e-10;

/// Prior variance of each arm's utility at `eta = 1`.
pub const PRIOR_VARIANCE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardObservation {
    pub arm: usize,
    pub reward: f64,
}

/// `r = rho_before - rho_after`; positive when the error shrinks.
pub fn compute_reward(error_before: f64, error_after: f64) -> f64 {
    error_before - error_after
}

pub fn anneal_eta(eta: f64, reward: f64) -> f64 {
    (0.9 * eta + 0.1 * reward.abs()).max(ETA_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ucb1Normal,
    KfManb,
    KfMandb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ucb1Normal, Algorithm::KfManb, Algorithm::KfMandb];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ucb1Normal => "ucb1-normal",
            Algorithm::KfManb => "kf-manb",
            Algorithm::KfMandb => "kf-mandb",
        }
    }

    /// Whether selection needs every arm's candidate command each step.
    pub fn uses_similarity(self) -> bool {
        matches!(self, Algorithm::KfMandb)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::usage("algorithm", format!("unknown algorithm `{s}` (expected ucb1-normal, kf-manb or kf-mandb)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditParams {
    pub noise: KalmanNoise,
    pub correlation: f64,
}

/// One selection algorithm's state.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandit {
    Ucb1Normal(Ucb1Normal),
    KfManb(KfManb),
    KfMandb(KfMandb),
}

impl Bandit {
    pub fn new(algorithm: Algorithm, arms: usize, params: BanditParams) -> Result<Self> {
        if arms == 0 {
            return Err(Error::Config("at least one arm is required".into()));
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(params.noise.transition) || !ok(params.noise.observation) {
            return Err(Error::Config("noise variances must be finite and positive".into()));
        }
        if !(0.0..=1.0).contains(&params.correlation) {
            return Err(Error::Config("correlation strength must lie in [0, 1]".into()));
        }
        Ok(match algorithm {
            Algorithm::Ucb1Normal => Bandit::Ucb1Normal(Ucb1Normal::new(arms)),
            Algorithm::KfManb => Bandit::KfManb(KfManb::new(arms, params.noise, 0.0, PRIOR_VARIANCE)),
            Algorithm::KfMandb => Bandit::KfMandb(KfMandb::new(
                arms,
                KfMandbParams {
                    noise: params.noise,
                    correlation: params.correlation,
                },
                PRIOR_VARIANCE,
            )),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Bandit::Ucb1Normal(_) => Algorithm::Ucb1Normal,
            Bandit::KfManb(_) => Algorithm::KfManb,
            Bandit::KfMandb(_) => Algorithm::KfMandb,
        }
    }

    pub fn arms(&self) -> usize {
        match self {
            Bandit::Ucb1Normal(s) => s.arms(),
            Bandit::KfManb(s) => s.means().len(),
            Bandit::KfMandb(s) => s.arms(),
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Bandit::Ucb1Normal(s) => s.select(),
            Bandit::KfManb(s) => s.select(rng),
            Bandit::KfMandb(s) => s.select(rng),
        }
    }

    /// Feed back a reward. `eta` scales the Kalman noise variances by
    /// `eta^2`; `similarity` is required by KF-MANDB only.
    pub fn update(&mut self, obs: RewardObservation, eta: f64, similarity: Option<&DMatrix<f64>>) -> Result<()> {
        if obs.arm >= self.arms() {
            return Err(Error::InvalidInput(format!("arm {} out of range 0..{}", obs.arm, self.arms())));
        }
        if !obs.reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward {} for arm {}", obs.reward, obs.arm)));
        }
        match self {
            Bandit::Ucb1Normal(s) => s.update(obs),
            Bandit::KfManb(s) => s.update_scaled(obs, eta * eta),
            Bandit::KfMandb(s) => {
                let sim = similarity
                    .ok_or_else(|| Error::InvalidInput("KF-MANDB update requires a similarity matrix".into()))?;
                s.predict(sim, eta)?;
                s.correct(obs, eta)?;
            }
        }
        Ok(())
    }
}

/// Index of the largest finite value; the first one wins ties. Returns 0
/// when no value is finite.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn eta_annealing() {
        assert_close!(anneal_eta(1.0, 0.0), 0.9, 1e-15);
        assert_eq!(anneal_eta(1e-10, 0.0), 1e-10);
        assert_close!(anneal_eta(0.5, -2.0), 0.65, 1e-15);
    }

    #[test]
    fn rewards() {
        assert_eq!(compute_reward(10.0, 8.0), 2.0);
        assert_eq!(compute_reward(4.0, 4.0), 0.0);
        assert_eq!(compute_reward(3.0, 5.0), -2.0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert!("ucb".parse::<Algorithm>().is_err());
    }

    #[test]
    fn argmax_first_max_wins() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 2.0]), 1);
    }

    #[test]
    fn kf_mandb_requires_similarity() {
        let params = BanditParams {
            noise: KalmanNoise {
                transition: 1.0,
                observation: 1.0,
            },
            correlation: 0.9,
        };
        let mut b = Bandit::new(Algorithm::KfMandb, 2, params).unwrap();
        let obs = RewardObservation { arm: 0, reward: 1.0 };
        assert!(b.update(obs, 1.0, None).is_err());
        assert!(b.update(RewardObservation { arm: 2, reward: 1.0 }, 1.0, None).is_err());
        assert!(Bandit::new(Algorithm::KfManb, 0, params).is_err());
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 5;
        let params = KfMandbParams {
            noise: KalmanNoise {
                transition: 0.1,
                observation: 0.01,
            },
            correlation: 0.9,
        };
        let mut s = KfMandb::new(m, params, PRIOR_VARIANCE);
        let mut eta = 1.0;
        for _ in 0..10_000 {
            let vectors: Vec<DVector<f64>> = (0..m)
                .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let sim = vector_similarity_matrix(&vectors);
            let reward: f64 = rng.sample::<f64, _>(StandardNormal) * 0.1;
            eta = anneal_eta(eta, reward);
            s.predict(&sim, eta).unwrap();
            s.correct(
                RewardObservation {
                    arm: rng.random_range(0..m),
                    reward,
                },
                eta,
            )
            .unwrap();
        }
        let c = s.covariance();
        assert!((c - c.transpose()).amax() <= 1e-10);
        let min = c.clone().symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0, "{min}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn uncorrelated_joint_filter_reduces_to_independent_filters(
            seed in any::<u64>(),
            arms in 1usize..6,
            steps in 1usize..40,
            eta in 0.01f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = KalmanNoise { transition: 0.3, observation: 0.7 };
            let mut joint = KfMandb::new(arms, KfMandbParams { noise, correlation: 0.0 }, 5.0);
            let mut scalar = KfManb::new(arms, noise, 0.0, 5.0);
            let sim = DMatrix::from_fn(arms, arms, |i, j| if i == j { 1.0 } else { 0.4 });
            for _ in 0..steps {
                let obs = RewardObservation { arm: rng.random_range(0..arms), reward: rng.random_range(-2.0..2.0) };
                joint.predict(&sim, eta).unwrap();
                joint.correct(obs, eta).unwrap();
                scalar.update_scaled(obs, eta * eta);
            }
            for j in 0..arms {
                prop_assert!((joint.mean()[j] - scalar.means()[j]).abs() <= 1e-9);
                prop_assert!((joint.covariance()[(j, j)] - scalar.variances()[j]).abs() <= 1e-9 * scalar.variances()[j].max(1.0));
            }
        }

        #[test]
        fn mean_shift_leaves_selection_unchanged(seed in any::<u64>(), shift in 0.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 4;
            let mean = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(m, m) * 0.1;
            let params = KfMandbParams { noise: KalmanNoise { transition: 1.0, observation: 1.0 }, correlation: 0.5 };
            let base = KfMandb::from_parts(mean.clone(), cov.clone(), params).unwrap();
            let shifted = KfMandb::from_parts(mean.add_scalar(shift), cov, params).unwrap();
            for _ in 0..200 {
                let z = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
                prop_assert_eq!(base.select_with_normals(&z), shifted.select_with_normals(&z));
            }
        }
    }
}
