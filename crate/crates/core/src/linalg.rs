//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Symmetric part `(A + A^T) / 2`.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Dense LU solve; `None` when the factorization is singular or the result is
/// not finite.
pub fn solve(a: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.lu().solve(rhs)?;
    x.iter().all(|c| c.is_finite()).then_some(x)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(s: &DMatrix<f64>) -> f64 {
    s.clone().symmetric_eigenvalues().min()
}

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Orthogonal factor of the QR decomposition of a uniform random matrix, with
/// column signs fixed so the result does not depend on the QR convention.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = uniform_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Uniform sample from the ball of the given radius centred at the origin.
pub fn sample_ball<R: Rng>(rng: &mut R, n: usize, radius: f64) -> DVector<f64> {
    let mut dir = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let norm = dir.norm();
    if norm == 0.0 {
        return DVector::zeros(n);
    }
    dir /= norm;
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}

/// Euclidean projection onto the ball `|z - center| <= radius`.
pub fn project_ball(z: &DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let off = z - center;
    let norm = off.norm();
    if norm <= radius {
        z.clone()
    } else {
        center + off * (radius / norm)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(&mut rng, 5);
        let err = (q.transpose() * &q - DMatrix::identity(5, 5)).norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_ball(&mut rng, 3, 2.0).norm() <= 2.0);
        }
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(4), 24.0);
    }
}
