//! Ball-constrained weighted linear least squares.
//!
//! Solves `min ||J x - t||^2_W  s.t.  ||x|| <= r` where every weight applies
//! to the three coordinates of one point. The problem is a trust-region
//! subproblem: either the (lightly regularized) normal-equation solution is
//! inside the ball, or the solution lies on the sphere and satisfies
//! `(J^T W J + lambda I) x = J^T W t` for some `lambda > 0`, found by
//! bisection on `||x(lambda)|| = r`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Baseline Tikhonov factor relative to the mean diagonal of the normal matrix.
pub const RELATIVE_REGULARIZATION: f64 = 1e-10;
pub const BISECTION_TOL: f64 = 1e-10;
pub const MAX_BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLeastSquaresProblem {
    pub jacobian: DMatrix<f64>,
    pub target: DVector<f64>,
    /// One non-negative weight per point (three rows of `jacobian`).
    pub weights: DVector<f64>,
    pub max_norm: f64,
}

impl WeightedLeastSquaresProblem {
    pub fn new(
        jacobian: DMatrix<f64>,
        target: DVector<f64>,
        weights: DVector<f64>,
        max_norm: f64,
    ) -> Result<Self> {
        let problem = Self {
            jacobian,
            target,
            weights,
            max_norm,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.jacobian.nrows();
        if rows != 3 * self.weights.len() || rows != self.target.len() {
            return Err(Error::dim(format!(
                "jacobian has {} rows, target {} entries, weights {} points",
                rows,
                self.target.len(),
                self.weights.len()
            )));
        }
        let finite = |m: &[f64]| m.iter().all(|x| x.is_finite());
        if !finite(self.jacobian.as_slice())
            || !finite(self.target.as_slice())
            || !finite(self.weights.as_slice())
            || !self.max_norm.is_finite()
        {
            return Err(Error::InvalidInput("non-finite least-squares input".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidInput("negative point weight".into()));
        }
        if self.max_norm <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "max_norm must be positive, got {}",
                self.max_norm
            )));
        }
        Ok(())
    }

    /// Per-row weights: each point weight repeated for x, y, z.
    pub fn row_weights(&self) -> DVector<f64> {
        DVector::from_fn(3 * self.weights.len(), |i, _| self.weights[i / 3])
    }

    /// `(J^T W J, J^T W t)`
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = self.row_weights();
        let mut weighted = self.jacobian.clone();
        for (mut row, &wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let gram = self.jacobian.tr_mul(&weighted);
        let rhs = weighted.tr_mul(&self.target);
        (gram, rhs)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let r = &self.jacobian * x - &self.target;
        r.iter()
            .zip(self.row_weights().iter())
            .map(|(ri, wi)| wi * ri * ri)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSolution {
    pub x: DVector<f64>,
    /// Lagrange multiplier of the ball constraint (the regularization floor
    /// for interior solutions).
    pub multiplier: f64,
    pub on_boundary: bool,
    pub iterations: usize,
}

/// Spectral factorization of a normal matrix, reusable across right-hand
/// sides and radii.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    regularization: f64,
}

impl NormalEquations {
    pub fn from_gram(gram: DMatrix<f64>) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::dim(format!(
                "normal matrix is {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if !gram.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite normal matrix".into()));
        }
        let n = gram.nrows();
        let trace = gram.trace();
        let regularization = if n == 0 {
            0.0
        } else {
            RELATIVE_REGULARIZATION * trace / n as f64
        };
        let sym = (&gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let eigenvalues = eig.eigenvalues.map(|e| e.max(0.0));
        Ok(Self {
            eigenvalues,
            eigenvectors: eig.eigenvectors,
            regularization,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    fn norm_sq_at(&self, coeffs: &DVector<f64>, lambda: f64) -> f64 {
        coeffs
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, e)| {
                let d = e + lambda;
                c * c / (d * d)
            })
            .sum()
    }

    fn solution_at(&self, coeffs: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let scaled = DVector::from_fn(coeffs.len(), |i, _| {
            coeffs[i] / (self.eigenvalues[i] + lambda)
        });
        &self.eigenvectors * scaled
    }

    /// Minimizer of `x^T A x - 2 b^T x` over `||x|| <= max_norm`.
    pub fn solve(&self, rhs: &DVector<f64>, max_norm: f64) -> Result<BallSolution> {
        if rhs.len() != self.dim() {
            return Err(Error::dim(format!(
                "rhs has {} entries, normal matrix is {}",
                rhs.len(),
                self.dim()
            )));
        }
        if max_norm.is_nan() || max_norm <= 0.0 || !rhs.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("invalid rhs or radius".into()));
        }
        let n = self.dim();
        let rhs_norm = rhs.norm();
        if self.regularization <= 0.0 || rhs_norm == 0.0 {
            // Zero normal matrix implies zero rhs: nothing to move.
            return Ok(BallSolution {
                x: DVector::zeros(n),
                multiplier: 0.0,
                on_boundary: false,
                iterations: 0,
            });
        }

        let coeffs = self.eigenvectors.tr_mul(rhs);
        let radius_sq = max_norm * max_norm;
        let floor = self.regularization;
        if self.norm_sq_at(&coeffs, floor) <= radius_sq {
            return Ok(BallSolution {
                x: self.solution_at(&coeffs, floor),
                multiplier: floor,
                on_boundary: false,
                iterations: 0,
            });
        }

        // ||x(lambda)|| <= ||b|| / lambda, so this bracket is feasible.
        let mut lo = floor;
        let mut hi = (rhs_norm / max_norm).max(floor);
        let mut iterations = 0;
        while iterations < MAX_BISECTION_ITERS {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let norm = self.norm_sq_at(&coeffs, mid).sqrt();
            if norm > max_norm {
                lo = mid;
            } else {
                hi = mid;
                if max_norm - norm < BISECTION_TOL * max_norm {
                    break;
                }
            }
        }
        Ok(BallSolution {
            x: self.solution_at(&coeffs, hi),
            multiplier: hi,
            on_boundary: true,
            iterations,
        })
    }
}

thread_local! {
    static SOLVE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of ball-constrained solves issued on the current thread.
pub fn solve_calls() -> u64 {
    SOLVE_CALLS.with(Cell::get)
}

pub fn solve_ball_constrained_wls_detailed(
    problem: &WeightedLeastSquaresProblem,
) -> Result<BallSolution> {
    SOLVE_CALLS.with(|c| c.set(c.get() + 1));
    problem.validate()?;
    let (gram, rhs) = problem.normal_equations();
    NormalEquations::from_gram(gram)?.solve(&rhs, problem.max_norm)
}

pub fn solve_ball_constrained_wls(problem: &WeightedLeastSquaresProblem) -> Result<DVector<f64>> {
    solve_ball_constrained_wls_detailed(problem).map(|s| s.x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub slackness: f64,
    pub multiplier: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.slackness)
    }
}

/// KKT diagnostics with the multiplier recovered by least squares from the
/// stationarity condition `J^T W (J x - t) + lambda x = 0`.
pub fn kkt_report(problem: &WeightedLeastSquaresProblem, x: &DVector<f64>) -> KktReport {
    let (gram, rhs) = problem.normal_equations();
    let grad = &gram * x - &rhs;
    let xx = x.norm_squared();
    let multiplier = if xx > 0.0 {
        (-x.dot(&grad) / xx).max(0.0)
    } else {
        0.0
    };
    let stationarity = (&grad + x * multiplier).amax();
    let gap = x.norm() - problem.max_norm;
    KktReport {
        stationarity,
        feasibility: gap.max(0.0),
        slackness: (multiplier * gap).abs(),
        multiplier,
    }
}

pub fn kkt_residual(problem: &WeightedLeastSquaresProblem, x: &DVector<f64>) -> f64 {
    kkt_report(problem, x).max()
}
