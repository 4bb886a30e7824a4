use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{argmax, RewardObservation};
use crate::error::{Error, Result};

/// Relative diagonal jitter used to restore positive definiteness.
pub const JITTER_SCALE: f64 = 1e-12;
pub const MAX_JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanNoise {
    /// Transition (process) variance per step.
    pub transition: f64,
    /// Observation variance.
    pub observation: f64,
}

/// KF-MANB: one scalar Kalman filter per arm with Thompson sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct KfManb {
    means: Vec<f64>,
    variances: Vec<f64>,
    noise: KalmanNoise,
}

impl KfManb {
    pub fn new(arms: usize, noise: KalmanNoise, prior_mean: f64, prior_variance: f64) -> Self {
        Self {
            means: vec![prior_mean; arms],
            variances: vec![prior_variance; arms],
            noise,
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn noise(&self) -> KalmanNoise {
        self.noise
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let draws: Vec<f64> = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect();
        argmax(&draws)
    }

    pub fn update(&mut self, obs: RewardObservation) {
        self.update_scaled(obs, 1.0);
    }

    /// Update with both noise variances multiplied by `scale`.
    pub fn update_scaled(&mut self, obs: RewardObservation, scale: f64) {
        let tr = self.noise.transition * scale;
        let ob = self.noise.observation * scale;
        for (j, (mean, var)) in self.means.iter_mut().zip(self.variances.iter_mut()).enumerate() {
            if j == obs.arm {
                let prior = *var + tr;
                let denom = prior + ob;
                *mean = (prior * obs.reward + ob * *mean) / denom;
                *var = prior * ob / denom;
            } else {
                *var += tr;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfMandbParams {
    pub noise: KalmanNoise,
    /// Correlation strength `xi` in `[0, 1]`.
    pub correlation: f64,
}

/// KF-MANDB: a single joint Kalman filter over all arm utilities whose
/// process noise couples arms through the similarity of their commands.
#[derive(Debug, Clone, PartialEq)]
pub struct KfMandb {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    params: KfMandbParams,
}

impl KfMandb {
    pub fn new(arms: usize, params: KfMandbParams, prior_variance: f64) -> Self {
        Self {
            mean: DVector::zeros(arms),
            covariance: DMatrix::identity(arms, arms) * prior_variance,
            factor: DMatrix::identity(arms, arms) * prior_variance.sqrt(),
            params,
        }
    }

    pub fn from_parts(mean: DVector<f64>, covariance: DMatrix<f64>, params: KfMandbParams) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() != mean.len() {
            return Err(Error::dim("covariance must be M x M for an M-vector mean"));
        }
        let mut s = Self {
            factor: covariance.clone(),
            mean,
            covariance,
            params,
        };
        s.restore_positive_definite()?;
        Ok(s)
    }

    pub fn arms(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn params(&self) -> KfMandbParams {
        self.params
    }

    #[doc(hidden)]
    pub fn covariance_mut_unchecked(&mut self) -> &mut DMatrix<f64> {
        &mut self.covariance
    }

    fn restore_positive_definite(&mut self) -> Result<()> {
        let m = self.arms();
        self.covariance = (&self.covariance + self.covariance.transpose()) * 0.5;
        let jitter = JITTER_SCALE * self.covariance.trace().abs() / m.max(1) as f64;
        for attempt in 0..=MAX_JITTER_ATTEMPTS {
            if attempt > 0 {
                for i in 0..m {
                    self.covariance[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::<f64, Dyn>::new(self.covariance.clone()) {
                self.factor = chol.l();
                return Ok(());
            }
        }
        Err(Error::Numerical(format!(
            "covariance not positive definite after {MAX_JITTER_ATTEMPTS} jitter attempts"
        )))
    }

    /// Process step: `C += sigma_tr^2 eta^2 (xi S + (1 - xi) I)`.
    pub fn predict(&mut self, similarity: &DMatrix<f64>, eta: f64) -> Result<()> {
        let m = self.arms();
        if similarity.shape() != (m, m) {
            return Err(Error::dim(format!(
                "similarity is {}x{}, filter has {m} arms",
                similarity.nrows(),
                similarity.ncols()
            )));
        }
        let scale = self.params.noise.transition * (eta * eta);
        let xi = self.params.correlation;
        for i in 0..m {
            for j in 0..m {
                let identity = if i == j { 1.0 } else { 0.0 };
                self.covariance[(i, j)] += scale * (xi * similarity[(i, j)] + (1.0 - xi) * identity);
            }
        }
        self.restore_positive_definite()
    }

    /// Observation step with `H = e_arm` and noise `sigma_obs^2 eta^2`.
    pub fn correct(&mut self, obs: RewardObservation, eta: f64) -> Result<()> {
        let m = self.arms();
        if obs.arm >= m {
            return Err(Error::InvalidInput(format!("arm {} out of range 0..{m}", obs.arm)));
        }
        let a = obs.arm;
        let noise = self.params.noise.observation * (eta * eta);
        let column = self.covariance.column(a).into_owned();
        let innovation_var = column[a] + noise;
        let gain = &column / innovation_var;
        self.mean += &gain * (obs.reward - self.mean[a]);
        self.covariance.ger(-1.0, &gain, &column, 1.0);
        self.restore_positive_definite()
    }

    /// Thompson draw `mean + L z` from standard normals `z`.
    pub fn select_with_normals(&self, normals: &DVector<f64>) -> usize {
        let draw = &self.mean + &self.factor * normals;
        argmax(draw.as_slice())
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let z = DVector::from_fn(self.arms(), |_, _| rng.sample(StandardNormal));
        self.select_with_normals(&z)
    }
}
