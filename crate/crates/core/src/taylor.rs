//! Regularized Taylor models and their exact zeros.
//!
//! Around a center `v` the model of order `p` is
//!
//! ```text
//! F_v(x) = F(v) + sum_{j=1}^{p-1} (1/j!) D^j F(v)[x - v]^j + (2L/(p-1)!) |x - v|^{p-1} (x - v)
//! ```
//!
//! The regularizer is the gradient of a strictly convex function, so `F_v` is
//! strictly monotone whenever `F` is, and has exactly one zero. For `p = 1` the
//! zero is explicit; for `p = 2` it is found through a scalar secular equation
//! in the step length; any order with the needed derivative oracles can use
//! the damped Newton fallback.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, factorial};
use crate::operator::{Operator, Problem};
use crate::point::Point;

/// Relative model-residual target shared by all exact solvers.
pub const MODEL_RESIDUAL_TOL: f64 = 1e-10;
pub const DEFAULT_TOL_R: f64 = 1e-12;
pub const MAX_BISECTION_ITERS: usize = 200;
const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

#[derive(Clone)]
pub struct TaylorModel {
    center: Point,
    order: usize,
    lipschitz: f64,
    value: DVector<f64>,
    jacobian: Option<DMatrix<f64>>,
    tail: Option<Arc<dyn Operator>>,
}

impl std::fmt::Debug for TaylorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaylorModel")
            .field("center", &self.center)
            .field("order", &self.order)
            .field("lipschitz", &self.lipschitz)
            .field("value", &self.value.as_slice())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct StepSolution {
    pub x: Point,
    pub step_norm: f64,
    pub model_residual: f64,
    pub inner_iterations: usize,
}

/// Where the Newton fallback starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenericStart {
    /// Closed form (`p = 1`) or secular solution (`p = 2`), else the center.
    #[default]
    ExactWhenAvailable,
    Center,
}

impl TaylorModel {
    /// Model of `problem` around `center`, using the problem's order and `L`.
    pub fn new(problem: &Problem, center: &Point) -> Result<Self> {
        Self::with_constants(problem, center, problem.order(), problem.lipschitz())
    }

    /// Model of `problem` around `center` with an explicit order and `L`.
    pub fn with_constants(
        problem: &Problem,
        center: &Point,
        order: usize,
        lipschitz: f64,
    ) -> Result<Self> {
        center.ensure_dim(problem.dim())?;
        if order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(format!("lipschitz must be positive, got {lipschitz}")));
        }
        let v = center.as_vector();
        let value = problem.eval_vec(v);
        if value.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("F(v)"));
        }
        let jacobian = (order >= 2).then(|| problem.jacobian_vec(v));
        let tail = if order >= 3 {
            let probe = DVector::zeros(problem.dim());
            if problem.operator().taylor_tail(v, &probe, order).is_none() {
                return Err(Error::UnsupportedOrder(order));
            }
            Some(problem.operator_arc())
        } else {
            None
        };
        Ok(TaylorModel {
            center: center.clone(),
            order,
            lipschitz,
            value,
            jacobian,
            tail,
        })
    }

    /// Model from cached values; supports `p <= 2` only.
    pub fn from_parts(
        center: Point,
        order: usize,
        lipschitz: f64,
        value: DVector<f64>,
        jacobian: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if order >= 3 {
            return Err(Error::UnsupportedOrder(order));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(format!("lipschitz must be positive, got {lipschitz}")));
        }
        let n = center.dim();
        if value.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: value.len() });
        }
        if order == 2 {
            match &jacobian {
                Some(j) if j.shape() == (n, n) => {}
                Some(j) => {
                    return Err(Error::DimensionMismatch { expected: n, found: j.nrows() })
                }
                None => return Err(Error::Config("order 2 model needs a jacobian".into())),
            }
        }
        Ok(TaylorModel {
            center,
            order,
            lipschitz,
            value,
            jacobian: if order >= 2 { jacobian } else { None },
            tail: None,
        })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Cached `F(v)`.
    pub fn value_at_center(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn jacobian_at_center(&self) -> Option<&DMatrix<f64>> {
        self.jacobian.as_ref()
    }

    fn reg_coeff(&self) -> f64 {
        2.0 * self.lipschitz / factorial(self.order - 1)
    }

    fn eval_step(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut out = self.value.clone();
        if let Some(j) = &self.jacobian {
            out += j * d;
        }
        if let Some(op) = &self.tail {
            let (t, _) = op
                .taylor_tail(self.center.as_vector(), d, self.order)
                .expect("tail availability checked at construction");
            out += t;
        }
        let nd = d.norm();
        out + d * (self.reg_coeff() * nd.powi(self.order as i32 - 1))
    }

    fn jacobian_step(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let n = d.len();
        let mut jac = match &self.jacobian {
            Some(j) => j.clone(),
            None => DMatrix::zeros(n, n),
        };
        if let Some(op) = &self.tail {
            let (_, tj) = op
                .taylor_tail(self.center.as_vector(), d, self.order)
                .expect("tail availability checked at construction");
            jac += tj;
        }
        let c = self.reg_coeff();
        let p = self.order as i32;
        let nd = d.norm();
        if p == 1 {
            jac += DMatrix::identity(n, n) * c;
        } else if nd > 0.0 {
            jac += DMatrix::identity(n, n) * (c * nd.powi(p - 1));
            jac += d * d.transpose() * (c * (p - 1) as f64 * nd.powi(p - 3));
        }
        jac
    }

    fn residual_target(&self, tol: f64) -> f64 {
        tol * (1.0 + self.value.norm())
    }

    fn solution(&self, x: DVector<f64>, iterations: usize) -> Result<StepSolution> {
        let d = &x - self.center.as_vector();
        let model_residual = self.eval_step(&d).norm();
        Ok(StepSolution {
            step_norm: d.norm(),
            x: Point::from_vector(x)?,
            model_residual,
            inner_iterations: iterations,
        })
    }
}

/// `F_v(x)`.
pub fn eval_model(m: &TaylorModel, x: &Point) -> Result<Point> {
    x.ensure_dim(m.center.dim())?;
    let d = x.as_vector() - m.center.as_vector();
    Point::from_vector(m.eval_step(&d))
}

/// Closed-form zero for `p = 1`: `x = v - F(v) / (2L)`.
pub fn solve_p1(m: &TaylorModel) -> Result<StepSolution> {
    if m.order != 1 {
        return Err(Error::Config(format!("solve_p1 called on order {} model", m.order)));
    }
    let x = m.center.as_vector() - &m.value / (2.0 * m.lipschitz);
    m.solution(x, 0)
}

/// Zero of the `p = 2` model via bisection on the secular equation
/// `phi(r) = |d(r)| - r`, `d(r) = -(J + 2 L r I)^{-1} F(v)`.
pub fn solve_p2_secular(m: &TaylorModel, tol_r: f64) -> Result<StepSolution> {
    if m.order != 2 {
        return Err(Error::Config(format!("solve_p2_secular called on order {} model", m.order)));
    }
    let g = &m.value;
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return m.solution(m.center.as_vector().clone(), 0);
    }
    let jac = m.jacobian.as_ref().expect("order 2 model carries a jacobian");
    let two_l = 2.0 * m.lipschitz;
    let n = g.len();
    let step_at = |r: f64| -> Option<DVector<f64>> {
        let mut shifted = jac.clone();
        for i in 0..n {
            shifted[(i, i)] += two_l * r;
        }
        linalg::solve(shifted, g).map(|d| -d)
    };
    let target = m.residual_target(MODEL_RESIDUAL_TOL);

    // |d(r)| <= |g| / (2 L r) for monotone J, so phi(hi) <= 0
    let mut hi = (gnorm / two_l).sqrt();
    let mut lo = 1e-16 * (1.0 + hi);
    let d_hi = step_at(hi).ok_or(Error::SingularSystem { r: hi })?;
    let phi_hi = d_hi.norm() - hi;
    let d_lo = step_at(lo);
    let phi_lo = d_lo.as_ref().map_or(f64::INFINITY, |d| d.norm() - lo);

    if phi_hi >= 0.0 || phi_lo <= 0.0 {
        // an endpoint may itself be a zero to working precision
        for d in [Some(d_hi), d_lo].into_iter().flatten() {
            let sol = m.solution(m.center.as_vector() + d, 0)?;
            if sol.model_residual <= target {
                return Ok(sol);
            }
        }
        return Err(Error::InfeasibleBracket { lo, hi, phi_lo, phi_hi });
    }

    let mut iterations = 0;
    let mut best = None;
    while iterations < MAX_BISECTION_ITERS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let d = step_at(mid).ok_or(Error::SingularSystem { r: mid })?;
        let phi = d.norm() - mid;
        best = Some(d);
        if phi > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol_r * hi {
            break;
        }
    }
    let d = best.expect("at least one bisection step");
    let sol = m.solution(m.center.as_vector() + d, iterations)?;
    if sol.model_residual <= target {
        return Ok(sol);
    }
    // tight brackets on badly conditioned shifts: finish with Newton
    newton(m, sol.x.into_vector(), MODEL_RESIDUAL_TOL, 50, iterations)
}

/// Damped Newton on the model with backtracking on `|F_v|`.
pub fn solve_generic(
    m: &TaylorModel,
    tol: f64,
    max_inner: usize,
    start: GenericStart,
) -> Result<StepSolution> {
    let x0 = match (start, m.order) {
        (GenericStart::ExactWhenAvailable, 1) => solve_p1(m)?.x.into_vector(),
        (GenericStart::ExactWhenAvailable, 2) => match solve_p2_secular(m, DEFAULT_TOL_R) {
            Ok(s) => s.x.into_vector(),
            Err(_) => m.center.as_vector().clone(),
        },
        _ => m.center.as_vector().clone(),
    };
    newton(m, x0, tol, max_inner, 0)
}

fn newton(
    m: &TaylorModel,
    mut x: DVector<f64>,
    tol: f64,
    max_inner: usize,
    prior_iterations: usize,
) -> Result<StepSolution> {
    let v = m.center.as_vector();
    let target = m.residual_target(tol);
    let mut fx = m.eval_step(&(&x - v));
    let mut res = fx.norm();
    for it in 0..max_inner {
        if res <= target {
            return m.solution(x, prior_iterations + it);
        }
        let jac = m.jacobian_step(&(&x - v));
        let rhs = -&fx;
        let dir = match linalg::solve(jac.clone(), &rhs) {
            Some(d) => d,
            None => {
                let n = x.len();
                let shift = 1e-10 * (1.0 + linalg::op_norm(&jac));
                linalg::solve(jac + DMatrix::identity(n, n) * shift, &rhs)
                    .ok_or(Error::SingularSystem { r: (&x - v).norm() })?
            }
        };
        let mut t = 1.0;
        loop {
            let trial = &x + &dir * t;
            let f_trial = m.eval_step(&(&trial - v));
            let r_trial = f_trial.norm();
            if r_trial < (1.0 - 1e-4 * t) * res || (r_trial <= target) {
                x = trial;
                fx = f_trial;
                res = r_trial;
                break;
            }
            t *= 0.5;
            if t < MIN_STEP {
                return Err(Error::NoConvergence {
                    iterations: prior_iterations + it + 1,
                    best_residual: res,
                    best: Box::new(Point::from_vector(x)?),
                });
            }
        }
    }
    if res <= target {
        return m.solution(x, prior_iterations + max_inner);
    }
    Err(Error::NoConvergence {
        iterations: prior_iterations + max_inner,
        best_residual: res,
        best: Box::new(Point::from_vector(x)?),
    })
}

/// Exact zero of the model using the natural solver for its order.
pub fn solve_model(m: &TaylorModel, tol_r: f64, tol: f64, max_inner: usize) -> Result<StepSolution> {
    match m.order {
        1 => solve_p1(m),
        2 => solve_p2_secular(m, tol_r),
        _ => solve_generic(m, tol, max_inner, GenericStart::Center),
    }
}
