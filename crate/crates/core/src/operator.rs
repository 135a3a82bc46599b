//! Monotone operators, derivative oracles and the residue function.
//!
//! A [`Problem`] bundles an [`Operator`] with the smoothness constant `L`
//! declared for a particular order `p`, and with a reference solution when one
//! is known. Every solver in the crate consumes a `Problem`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::point::Point;

/// A map `F: R^d -> R^d` together with whatever derivative information it can
/// provide.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian, if available.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Higher Taylor terms `sum_{j=2}^{p-1} (1/j!) D^j F(v)[d]^j` together
    /// with their Jacobian with respect to `d`. Only needed for `p >= 3`.
    fn taylor_tail(
        &self,
        _v: &DVector<f64>,
        _d: &DVector<f64>,
        _order: usize,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    /// `(A, b)` when `F(x) = A x + b`.
    fn affine_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }
}

/// Operator built from closures. Mostly useful for ad-hoc problems in tests
/// and examples.
pub struct FnOperator {
    dim: usize,
    eval: EvalFn,
    jac: Option<JacobianFn>,
}

type EvalFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

impl FnOperator {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnOperator {
            dim,
            eval: Box::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl Operator for FnOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(x))
    }
}

/// A monotone equation problem `F(x) = 0` with the constant `L` for order `p`.
#[derive(Clone)]
pub struct Problem {
    name: String,
    operator: Arc<dyn Operator>,
    order: usize,
    lipschitz: f64,
    solution: Option<Point>,
    region_radius: Option<f64>,
    strong_monotonicity: Option<f64>,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        operator: Arc<dyn Operator>,
        order: usize,
        lipschitz: f64,
    ) -> Result<Self> {
        if operator.dim() == 0 {
            return Err(Error::Construction("operator has zero dimension".into()));
        }
        if order == 0 {
            return Err(Error::Construction("order p must be at least 1".into()));
        }
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::Construction(format!(
                "lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        Ok(Problem {
            name: name.into(),
            operator,
            order,
            lipschitz,
            solution: None,
            region_radius: None,
            strong_monotonicity: None,
        })
    }

    /// Attaches a known zero. Rejects points that are not zeros of `F`.
    pub fn with_solution(mut self, solution: Point) -> Result<Self> {
        solution.ensure_dim(self.dim())?;
        let res = self.operator.eval(&solution).norm();
        if res > 1e-12 * (1.0 + solution.norm()) {
            return Err(Error::Construction(format!(
                "declared solution has residue {res:e}"
            )));
        }
        self.solution = Some(solution);
        Ok(self)
    }

    pub fn with_region(mut self, radius: f64) -> Self {
        self.region_radius = Some(radius);
        self
    }

    pub fn with_strong_monotonicity(mut self, mu: f64) -> Self {
        self.strong_monotonicity = Some(mu);
        self
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::Construction(format!(
                "lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn solution(&self) -> Option<&Point> {
        self.solution.as_ref()
    }

    /// Radius `R` of the region `|x - x*| <= R` on which `lipschitz` is valid,
    /// when the constant is only local.
    pub fn region_radius(&self) -> Option<f64> {
        self.region_radius
    }

    pub fn strong_monotonicity(&self) -> Option<f64> {
        self.strong_monotonicity
    }

    pub fn operator(&self) -> &dyn Operator {
        self.operator.as_ref()
    }

    pub fn operator_arc(&self) -> Arc<dyn Operator> {
        Arc::clone(&self.operator)
    }

    pub fn has_jacobian(&self) -> bool {
        self.operator.jacobian(&DVector::zeros(self.dim())).is_some()
    }

    /// `F(x)` on a raw vector; the caller guarantees the dimension.
    pub(crate) fn eval_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.operator.eval(x)
    }

    /// Analytic Jacobian when available, central differences otherwise.
    pub(crate) fn jacobian_vec(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self.operator.jacobian(x) {
            Some(j) => j,
            None => central_difference(self.operator.as_ref(), x, JacobianOracle::DEFAULT_FD_STEP),
        }
    }

    pub fn eval(&self, x: &Point) -> Result<Point> {
        x.ensure_dim(self.dim())?;
        Point::from_vector(self.operator.eval(x))
    }
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("order", &self.order)
            .field("lipschitz", &self.lipschitz)
            .field("solution", &self.solution)
            .field("region_radius", &self.region_radius)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianOracle {
    pub mode: JacobianMode,
    /// Relative step; the absolute step is `fd_step * (1 + |x|)`.
    pub fd_step: f64,
}

impl JacobianOracle {
    /// Cube root of machine epsilon.
    pub const DEFAULT_FD_STEP: f64 = 6.055_454_452_393_343e-6;

    pub fn analytic() -> Self {
        JacobianOracle {
            mode: JacobianMode::Analytic,
            fd_step: Self::DEFAULT_FD_STEP,
        }
    }

    pub fn finite_difference() -> Self {
        JacobianOracle {
            mode: JacobianMode::CentralDifference,
            fd_step: Self::DEFAULT_FD_STEP,
        }
    }
}

impl Default for JacobianOracle {
    fn default() -> Self {
        Self::analytic()
    }
}

/// `res(x) = |F(x)|`.
pub fn residue(problem: &Problem, x: &Point) -> Result<f64> {
    x.ensure_dim(problem.dim())?;
    Ok(problem.eval_vec(x).norm())
}

pub fn jacobian(problem: &Problem, x: &Point, oracle: JacobianOracle) -> Result<DMatrix<f64>> {
    x.ensure_dim(problem.dim())?;
    match oracle.mode {
        JacobianMode::Analytic => problem.operator.jacobian(x).ok_or_else(|| {
            Error::Config(format!(
                "problem '{}' has no analytic jacobian",
                problem.name
            ))
        }),
        JacobianMode::CentralDifference => {
            if !(oracle.fd_step > 0.0) {
                return Err(Error::Config("fd_step must be positive".into()));
            }
            Ok(central_difference(problem.operator(), x, oracle.fd_step))
        }
    }
}

fn central_difference(op: &dyn Operator, x: &DVector<f64>, rel_step: f64) -> DMatrix<f64> {
    let n = x.len();
    let h = rel_step * (1.0 + x.norm());
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let xj = probe[j];
        probe[j] = xj + h;
        let plus = op.eval(&probe);
        probe[j] = xj - h;
        let minus = op.eval(&probe);
        probe[j] = xj;
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Smallest value of `<F(x)-F(y), x-y> / |x-y|^2` over `samples` seeded pairs
/// drawn uniformly from the ball of the given radius around the origin.
/// Non-negative for a monotone operator.
pub fn monotonicity_margin(problem: &Problem, radius: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.dim();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let x = linalg::sample_ball(&mut rng, n, radius);
        let y = linalg::sample_ball(&mut rng, n, radius);
        let diff = &x - &y;
        let d2 = diff.norm_squared();
        if d2 == 0.0 {
            continue;
        }
        let inner = (problem.eval_vec(&x) - problem.eval_vec(&y)).dot(&diff);
        worst = worst.min(inner / d2);
    }
    worst
}

/// Largest observed ratio `|J(x) - J(y)|_op / |x - y|` over seeded pairs in
/// the ball `|x - center| <= radius`.
pub fn jacobian_lipschitz_estimate(
    problem: &Problem,
    center: &DVector<f64>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = center + linalg::sample_ball(&mut rng, n, radius);
        // nearby pairs probe the local constant; far pairs the global one
        let y = if rng.random_bool(0.5) {
            center + linalg::sample_ball(&mut rng, n, radius)
        } else {
            let mut y = &x + linalg::sample_ball(&mut rng, n, 1e-3 * radius);
            let off = &y - center;
            let dist = off.norm();
            if dist > radius {
                y = center + off * (radius / dist);
            }
            y
        };
        let dist = (&x - &y).norm();
        if dist == 0.0 {
            continue;
        }
        let diff = problem.jacobian_vec(&x) - problem.jacobian_vec(&y);
        worst = worst.max(linalg::op_norm(&diff) / dist);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_1d() -> Problem {
        let op = FnOperator::new(1, |x| x.clone()).with_jacobian(|_| DMatrix::identity(1, 1));
        Problem::new("identity", Arc::new(op), 1, 1.0).unwrap()
    }

    fn cube_1d() -> Problem {
        let op = FnOperator::new(1, |x| x.map(|c| c * c * c))
            .with_jacobian(|x| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]));
        Problem::new("cube", Arc::new(op), 2, 6.0).unwrap()
    }

    #[test]
    fn residue_of_identity() {
        let p = identity_1d();
        assert_eq!(residue(&p, &Point::new(vec![0.0]).unwrap()).unwrap(), 0.0);
        assert_eq!(residue(&p, &Point::new(vec![3.0]).unwrap()).unwrap(), 3.0);
    }

    #[test]
    fn residue_rejects_dimension_mismatch() {
        let p = identity_1d();
        let err = residue(&p, &Point::new(vec![1.0, 2.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn jacobian_modes() {
        let p = cube_1d();
        let x = Point::new(vec![2.0]).unwrap();
        let ja = jacobian(&p, &x, JacobianOracle::analytic()).unwrap();
        assert_eq!(ja[(0, 0)], 12.0);
        let jf = jacobian(&p, &x, JacobianOracle::finite_difference()).unwrap();
        assert!((jf[(0, 0)] - 12.0).abs() < 1e-6 * 13.0);
    }

    #[test]
    fn analytic_jacobian_missing_is_config_error() {
        let op = FnOperator::new(1, |x| x.clone());
        let p = Problem::new("nojac", Arc::new(op), 1, 1.0).unwrap();
        let x = Point::new(vec![1.0]).unwrap();
        assert!(matches!(
            jacobian(&p, &x, JacobianOracle::analytic()),
            Err(Error::Config(_))
        ));
        let jf = jacobian(&p, &x, JacobianOracle::finite_difference()).unwrap();
        assert!((jf[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_solution_is_rejected() {
        let p = identity_1d();
        assert!(p.clone().with_solution(Point::new(vec![0.5]).unwrap()).is_err());
        assert!(p.with_solution(Point::new(vec![0.0]).unwrap()).is_ok());
    }
}
