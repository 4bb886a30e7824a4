use nalgebra::{DMatrix, DVector};

use crate::geometry::{command_inner_product, RobotCommand};

/// Norms below this count as zero commands.
pub const MIN_COMMAND_NORM: f64 = 1e-10;

/// Cosine-similarity matrix from a Gram matrix of inner products. Unit
/// diagonal; zero coupling for any vector with (near) zero norm.
pub fn cosine_from_gram(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let norms: Vec<f64> = (0..n).map(|i| gram[(i, i)].max(0.0).sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if norms[i] < MIN_COMMAND_NORM || norms[j] < MIN_COMMAND_NORM {
            0.0
        } else {
            (gram[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    })
}

/// Cosine similarity of robot commands under the `c`-scaled twist inner
/// product.
pub fn command_similarity_matrix(commands: &[RobotCommand], c: f64) -> DMatrix<f64> {
    let n = commands.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = command_inner_product(&commands[i], &commands[j], c).unwrap_or(0.0);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    cosine_from_gram(&gram)
}

/// Cosine similarity of plain vectors (Euclidean inner product).
pub fn vector_similarity_matrix(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let n = vectors.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = vectors[i].dot(&vectors[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    cosine_from_gram(&gram)
}
