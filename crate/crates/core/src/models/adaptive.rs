use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use super::{DeformationModel, Scene};
use crate::error::{Error, Result};

/// Commands with `|q|^2` at or below this are too small to learn from.
pub const MIN_COMMAND_NORM_SQ: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveJacobianState {
    pub jacobian: DMatrix<f64>,
    pub learning_rate: f64,
}

impl AdaptiveJacobianState {
    pub fn new(jacobian: DMatrix<f64>, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning rate must lie in (0, 1], got {learning_rate}"
            )));
        }
        if !jacobian.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite Jacobian estimate".into()));
        }
        Ok(Self {
            jacobian,
            learning_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroydenStatus {
    Applied,
    /// Command norm too small; state left unchanged.
    Skipped,
}

/// Rank-one secant update `J += rate * (p - J q) q^T / (q^T q)`.
pub fn broyden_update(
    state: &AdaptiveJacobianState,
    command: &DVector<f64>,
    observed: &DVector<f64>,
) -> Result<(AdaptiveJacobianState, BroydenStatus)> {
    let j = &state.jacobian;
    if command.len() != j.ncols() || observed.len() != j.nrows() {
        return Err(Error::dim(format!(
            "Jacobian is {}x{}, command has {} entries, observation {}",
            j.nrows(),
            j.ncols(),
            command.len(),
            observed.len()
        )));
    }
    let qq = command.norm_squared();
    if qq <= MIN_COMMAND_NORM_SQ {
        return Ok((state.clone(), BroydenStatus::Skipped));
    }
    let residual = observed - j * command;
    let mut next = j.clone();
    next.ger(state.learning_rate / qq, &residual, command, 1.0);
    Ok((
        AdaptiveJacobianState {
            jacobian: next,
            learning_rate: state.learning_rate,
        },
        BroydenStatus::Applied,
    ))
}

#[derive(Debug, Clone)]
pub struct AdaptiveJacobianModel {
    state: AdaptiveJacobianState,
}

impl AdaptiveJacobianModel {
    pub fn new(state: AdaptiveJacobianState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &AdaptiveJacobianState {
        &self.state
    }
}

impl DeformationModel for AdaptiveJacobianModel {
    fn label(&self) -> String {
        format!("adaptive(learning_rate={:e})", self.state.learning_rate)
    }

    fn jacobian(&self, _scene: &Scene<'_>) -> Result<Cow<'_, DMatrix<f64>>> {
        Ok(Cow::Borrowed(&self.state.jacobian))
    }

    fn observe(&mut self, command: &DVector<f64>, observed: &DVector<f64>) -> Result<bool> {
        let (next, status) = broyden_update(&self.state, command, observed)?;
        self.state = next;
        Ok(status == BroydenStatus::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn perfect_prediction_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = AdaptiveJacobianState::new(random(&mut rng, 6, 4), 0.3).unwrap();
        let q = random(&mut rng, 4, 1).column(0).into_owned();
        let p = &s.jacobian * &q;
        let (next, status) = broyden_update(&s, &q, &p).unwrap();
        assert_eq!(status, BroydenStatus::Applied);
        assert!((next.jacobian - s.jacobian).amax() < 1e-15);
    }

    #[test]
    fn unit_rate_fits_secant_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = AdaptiveJacobianState::new(random(&mut rng, 9, 6), 1.0).unwrap();
        let q = random(&mut rng, 6, 1).column(0).into_owned();
        let p = random(&mut rng, 9, 1).column(0).into_owned();
        let (next, _) = broyden_update(&s, &q, &p).unwrap();
        assert!((&next.jacobian * &q - p).amax() < 1e-10);
    }

    #[test]
    fn scalar_half_rate() {
        let s = AdaptiveJacobianState::new(DMatrix::zeros(1, 1), 0.5).unwrap();
        let (next, _) = broyden_update(
            &s,
            &DVector::from_element(1, 2.0),
            &DVector::from_element(1, 4.0),
        )
        .unwrap();
        assert_eq!(next.jacobian[(0, 0)], 1.0);
    }

    #[test]
    fn tiny_command_is_skipped() {
        let s = AdaptiveJacobianState::new(DMatrix::identity(3, 3), 1.0).unwrap();
        let (next, status) =
            broyden_update(&s, &DVector::from_element(3, 1e-7), &DVector::from_element(3, 5.0)).unwrap();
        assert_eq!(status, BroydenStatus::Skipped);
        assert_eq!(next, s);
    }

    #[test]
    fn joint_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = AdaptiveJacobianState::new(random(&mut rng, 6, 3), rng.random_range(0.01..1.0)).unwrap();
            let q = random(&mut rng, 3, 1).column(0).into_owned();
            let p = random(&mut rng, 6, 1).column(0).into_owned();
            let alpha = rng.random_range(-10.0..10.0);
            let (a, _) = broyden_update(&s, &q, &p).unwrap();
            let (b, _) = broyden_update(&s, &(&q * alpha), &(&p * alpha)).unwrap();
            assert!((a.jacobian - b.jacobian).amax() < 1e-10);
        }
    }

    #[test]
    fn invalid_rate_rejected() {
        assert!(AdaptiveJacobianState::new(DMatrix::zeros(1, 1), 0.0).is_err());
        assert!(AdaptiveJacobianState::new(DMatrix::zeros(1, 1), 1.5).is_err());
    }
}
