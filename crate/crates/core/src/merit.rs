//! Restricted merit `merit(x) = sup { <F(z), x - z> : |z - x0| <= D }`.
//!
//! For affine `F(z) = Az + b` the objective is a concave quadratic in `z`, so
//! its maximum over the ball is computed exactly. For other operators a
//! multi-start ascent gives a lower bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, project_ball, sample_ball, sym_part};
use crate::operator::Problem;
use crate::point::Point;

const MAX_ASCENT: usize = 20_000;
const MAX_BISECTION: usize = 200;

#[derive(Debug, Clone)]
pub struct MeritSpec {
    anchor: Point,
    radius: f64,
    problem: Problem,
}

impl MeritSpec {
    /// Rejects radii that leave the known solution outside the ball.
    pub fn new(problem: &Problem, anchor: Point, radius: f64) -> Result<Self> {
        anchor.ensure_dim(problem.dim())?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("merit radius must be positive, got {radius}")));
        }
        if let Some(sol) = problem.solution() {
            let dist = (sol.as_vector() - anchor.as_vector()).norm();
            if dist > radius {
                return Err(Error::Config(format!(
                    "merit ball of radius {radius} misses the solution at distance {dist}"
                )));
            }
        }
        Ok(MeritSpec { anchor, radius, problem: problem.clone() })
    }

    /// Radius `2 |x0 - x*|`; needs a known solution distinct from the anchor.
    pub fn with_default_radius(problem: &Problem, anchor: Point) -> Result<Self> {
        let sol = problem
            .solution()
            .ok_or_else(|| Error::Config("default merit radius needs a known solution".into()))?;
        anchor.ensure_dim(problem.dim())?;
        let radius = 2.0 * (sol.as_vector() - anchor.as_vector()).norm();
        Self::new(problem, anchor, radius)
    }

    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }
}

/// Exact merit evaluator for an affine problem; reusable across many `x`.
#[derive(Debug, Clone)]
pub struct AffineMerit {
    a: DMatrix<f64>,
    b: DVector<f64>,
    x0: DVector<f64>,
    radius: f64,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    sym_norm: f64,
}

impl AffineMerit {
    pub fn new(spec: &MeritSpec) -> Result<Self> {
        let (a, b) = spec
            .problem
            .operator()
            .affine_parts()
            .ok_or_else(|| Error::Unsupported("exact merit needs an affine operator".into()))?;
        let s = sym_part(a);
        let eig = SymmetricEigen::new(s);
        let sym_norm = eig.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        Ok(AffineMerit {
            a: a.clone(),
            b: b.clone(),
            x0: spec.anchor.as_vector().clone(),
            radius: spec.radius,
            basis: eig.eigenvectors,
            eigenvalues: eig.eigenvalues,
            sym_norm,
        })
    }

    fn objective(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (&self.a * z + &self.b).dot(&(x - z))
    }

    fn gradient(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(x - z)) - (&self.a * z + &self.b)
    }

    /// Maximizer of the objective over the ball, from the stationarity
    /// condition `g0 - 2 S u = 2 nu u`, `u = z - x0`.
    fn kkt_point(&self, x: &DVector<f64>) -> DVector<f64> {
        let g0 = self.gradient(&self.x0, x);
        let gnorm = g0.norm();
        if gnorm == 0.0 {
            return self.x0.clone();
        }
        let c = self.basis.tr_mul(&g0);
        let lam_tol = 1e-13 * (1.0 + self.sym_norm);
        let c_tol = 1e-13 * (1.0 + gnorm);
        let mut interior = true;
        let mut u0 = DVector::zeros(c.len());
        for i in 0..c.len() {
            let l = self.eigenvalues[i].max(0.0);
            if l <= lam_tol {
                if c[i].abs() > c_tol {
                    interior = false;
                    break;
                }
            } else {
                u0[i] = c[i] / (2.0 * l);
            }
        }
        if interior && u0.norm() <= self.radius {
            return &self.x0 + &self.basis * u0;
        }
        let norm_at = |nu: f64| -> f64 {
            c.iter()
                .zip(self.eigenvalues.iter())
                .map(|(ci, li)| (ci / (2.0 * li.max(0.0) + 2.0 * nu)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        // |u(nu)| <= |g0| / (2 nu), so the root lies below |g0| / (2D)
        let mut lo = 0.0;
        let mut hi = gnorm / (2.0 * self.radius);
        for _ in 0..MAX_BISECTION {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) > self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        let u: DVector<f64> = c
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(ci, li)| ci / (2.0 * li.max(0.0) + 2.0 * hi))
            .collect::<Vec<_>>()
            .into();
        project_ball(&(&self.x0 + &self.basis * u), &self.x0, self.radius)
    }

    /// `merit(x)` with projected-gradient stationarity `<= tol`.
    pub fn evaluate(&self, x: &Point, tol: f64) -> Result<f64> {
        x.ensure_dim(self.x0.len())?;
        let x = x.as_vector();
        let step = 1.0 / (2.0 * self.sym_norm + 1.0);
        let mut z = self.kkt_point(x);
        for _ in 0..MAX_ASCENT {
            let next = project_ball(&(&z + self.gradient(&z, x) * step), &self.x0, self.radius);
            let pg = (&next - &z).norm() / step;
            if pg <= tol {
                break;
            }
            z = next;
        }
        let value = self.objective(&z, x);
        if value < -tol {
            return Err(Error::Inconsistent(format!("merit evaluated to {value:e} < 0")));
        }
        Ok(value.max(0.0))
    }
}

/// Exact merit for an affine monotone problem.
pub fn merit_affine_exact(spec: &MeritSpec, x: &Point, tol: f64) -> Result<f64> {
    AffineMerit::new(spec)?.evaluate(x, tol)
}

/// Best value of `<F(z), x - z>` found by projected ascent from `n_starts`
/// points in the ball. Always a lower bound on `merit(x)`.
///
/// The first start is `x` projected onto the ball; the rest are seeded uniform samples.
pub fn merit_sampled(spec: &MeritSpec, x: &Point, n_starts: usize, seed: u64) -> Result<f64> {
    let problem = &spec.problem;
    x.ensure_dim(problem.dim())?;
    let xv = x.as_vector();
    let x0 = spec.anchor.as_vector();
    let d = spec.radius;
    let psi = |z: &DVector<f64>| problem.eval_vec(z).dot(&(xv - z));
    let grad = |z: &DVector<f64>| problem.jacobian_vec(z).tr_mul(&(xv - z)) - problem.eval_vec(z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for i in 0..n_starts.max(1) {
        let mut z = if i == 0 {
            project_ball(xv, x0, d)
        } else {
            x0 + sample_ball(&mut rng, problem.dim(), d)
        };
        let mut val = psi(&z);
        let mut t = 1.0;
        for _ in 0..2_000 {
            let g = grad(&z);
            let mut moved = false;
            while t > 1e-14 {
                let trial = project_ball(&(&z + &g * t), x0, d);
                let tv = psi(&trial);
                if tv > val {
                    let shift = (&trial - &z).norm();
                    z = trial;
                    val = tv;
                    moved = shift > 1e-13 * (1.0 + z.norm());
                    t *= 2.0;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if val.is_finite() {
            best = best.max(val);
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::NonFinite("sampled merit"))
    }
}

/// `|Sym(A)|_op`, the curvature of the affine merit objective.
pub fn affine_curvature(a: &DMatrix<f64>) -> f64 {
    linalg::op_norm(&sym_part(a))
}
