//! Rescaled gradient flow `s' = -F(x) / |F(x)|^{1-1/p}` with `v = x0 + s`.
//!
//! The state `x(t)` is the point where `F(x) + |x - v|^{p-1} (x - v) = 0`, so
//! `v' = x - v`. The simulator advances `v` with explicit Euler and solves for
//! `x` by damped Newton at every step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::Problem;
use crate::point::Point;

/// Residue below which the trajectory is considered converged numerically.
pub const RESIDUE_UNDERFLOW: f64 = 1e-14;
pub const MAX_STEP: f64 = 0.1;
const MAX_NEWTON: usize = 100;
const POLISH_STEPS: usize = 3;
const MIN_DAMPING: f64 = 1.0 / (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub order: usize,
    pub step: f64,
    pub t_max: f64,
    pub inner_tol: f64,
}

impl FlowConfig {
    pub fn new(order: usize, step: f64, t_max: f64) -> Self {
        FlowConfig { order, step, t_max, inner_tol: 1e-12 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step <= MAX_STEP) {
            return Err(Error::Config(format!(
                "step must lie in (0, {MAX_STEP}], got {}",
                self.step
            )));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be finite and nonnegative, got {}", self.t_max)));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::Config("inner_tol must be positive".into()));
        }
        Ok(())
    }

    /// Number of Euler steps to reach `t_max`.
    pub fn steps(&self) -> usize {
        (self.t_max / self.step - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: Point,
    pub v: Point,
    pub s: DVector<f64>,
    /// `|F(x)|^{1/p - 1}`.
    pub lambda: f64,
    pub residue: f64,
    /// `E(t) = |s|^2`.
    pub lyapunov: f64,
    /// `|F(x)|^{(1-p)/p}`, the averaging weight.
    pub weight: f64,
    /// Weighted time average of `x` up to `t`.
    pub ergodic: Point,
    /// `|F(x) + |x - v|^{p-1} (x - v)|` left by the state solve.
    pub algebraic_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDiagnostics {
    /// Largest single-step increase of the residue.
    pub max_residue_increase: f64,
    /// Steps where the residue grew by more than `1e-8 |F(x(0))|`.
    pub monotonicity_violations: usize,
    /// `min_t |F(x(t))| - |F(x(0))| e^{-pt/(p-1)}`; `None` for `p = 1`.
    pub min_lower_bound_margin: Option<f64>,
    /// Largest `|lambda |x - v|^{p-1} - 1|` beyond what the algebraic
    /// residual of the state solve accounts for.
    pub max_rescaling_error: f64,
    pub underflow: bool,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub records: Vec<TrajectoryRecord>,
    pub diagnostics: FlowDiagnostics,
}

/// `|lambda |x - v|^{p-1} - 1|` at a sample.
pub fn rescaling_error(r: &TrajectoryRecord, order: usize) -> f64 {
    let step = (r.x.as_vector() - r.v.as_vector()).norm();
    (r.lambda * step.powi(order as i32 - 1) - 1.0).abs()
}

/// Deviation of the rescaling identity explained by the state-solve residual
/// `e`: `|F(x)|` and `|x - v|^p` differ by at most `e`, which moves the
/// identity by about `e / |F(x)|`.
pub fn rescaling_slack(r: &TrajectoryRecord) -> f64 {
    2.0 * r.algebraic_residual / r.residue
}

/// Relative slack on per-step residue increases.
pub const MONOTONICITY_SLACK: f64 = 1e-8;

fn state_map(problem: &Problem, order: usize, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let d = x - v;
    let nd = d.norm();
    problem.eval_vec(x) + &d * nd.powi(order as i32 - 1)
}

fn state_jacobian(problem: &Problem, order: usize, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let d = x - v;
    let nd = d.norm();
    let p = order as i32;
    let mut j = problem.jacobian_vec(x);
    if p == 1 {
        j += DMatrix::identity(n, n);
    } else if nd > 0.0 {
        j += DMatrix::identity(n, n) * nd.powi(p - 1);
        j += &d * d.transpose() * ((p - 1) as f64 * nd.powi(p - 3));
    }
    j
}

/// Solves `F(x) + |x - v|^{p-1} (x - v) = 0` to `inner_tol (1 + |F(v)|)`.
pub fn implicit_state_solve(
    v: &Point,
    order: usize,
    problem: &Problem,
    inner_tol: f64,
    warm_start: &Point,
) -> Result<Point> {
    v.ensure_dim(problem.dim())?;
    warm_start.ensure_dim(problem.dim())?;
    let vv = v.as_vector();
    let fv = problem.eval_vec(vv);
    let target = inner_tol * (1.0 + fv.norm());
    if fv.norm() <= target {
        return Ok(v.clone());
    }
    let mut x = warm_start.as_vector().clone();
    let mut g = state_map(problem, order, &x, vv);
    let mut res = g.norm();
    // a stale warm start can be worse than v itself
    let g_v = state_map(problem, order, vv, vv);
    if !(res.is_finite()) || g_v.norm() < res {
        x = vv.clone();
        g = g_v;
        res = g.norm();
    }
    let mut polish = 0;
    for it in 0..MAX_NEWTON {
        if res <= target {
            // Newton converges quadratically here; a few extra steps buy
            // accuracy down to rounding at negligible cost
            if polish == POLISH_STEPS || res == 0.0 {
                return Point::from_vector(x);
            }
            polish += 1;
            let j = state_jacobian(problem, order, &x, vv);
            let Some(dir) = linalg::solve(j, &(-&g)) else {
                return Point::from_vector(x);
            };
            let trial = &x + dir;
            let g_trial = state_map(problem, order, &trial, vv);
            if g_trial.norm() >= 0.5 * res {
                return Point::from_vector(x);
            }
            x = trial;
            g = g_trial;
            res = g.norm();
            continue;
        }
        let j = state_jacobian(problem, order, &x, vv);
        let rhs = -&g;
        let dir = match linalg::solve(j.clone(), &rhs) {
            Some(d) => d,
            None => {
                let n = x.len();
                let shift = 1e-10 * (1.0 + linalg::op_norm(&j));
                linalg::solve(j + DMatrix::identity(n, n) * shift, &rhs)
                    .ok_or(Error::SingularSystem { r: (&x - vv).norm() })?
            }
        };
        let mut t = 1.0;
        loop {
            let trial = &x + &dir * t;
            let g_trial = state_map(problem, order, &trial, vv);
            let r_trial = g_trial.norm();
            if r_trial <= target || r_trial < (1.0 - 1e-4 * t) * res {
                x = trial;
                g = g_trial;
                res = r_trial;
                break;
            }
            t *= 0.5;
            if t < MIN_DAMPING {
                return Err(Error::NoConvergence {
                    iterations: it + 1,
                    best_residual: res,
                    best: Box::new(Point::from_vector(x)?),
                });
            }
        }
    }
    if res <= target {
        return Point::from_vector(x);
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON,
        best_residual: res,
        best: Box::new(Point::from_vector(x)?),
    })
}

/// Running weighted integrals for the time average of `x`.
#[derive(Debug, Clone)]
struct Average {
    weight: f64,
    moment: DVector<f64>,
}

impl Average {
    fn average(&self, fallback: &Point) -> Point {
        if self.weight > 0.0 {
            Point::from_vector(&self.moment / self.weight).unwrap_or_else(|_| fallback.clone())
        } else {
            fallback.clone()
        }
    }
}

fn record_at(
    t: f64,
    x: Point,
    v: Point,
    x0: &Point,
    order: usize,
    problem: &Problem,
    avg: &Average,
) -> TrajectoryRecord {
    let fx = problem.eval_vec(x.as_vector());
    let residue = fx.norm();
    let p = order as f64;
    let s = v.as_vector() - x0.as_vector();
    let algebraic_residual = state_map(problem, order, x.as_vector(), v.as_vector()).norm();
    TrajectoryRecord {
        t,
        lambda: residue.powf(1.0 / p - 1.0),
        weight: residue.powf((1.0 - p) / p),
        lyapunov: s.norm_squared(),
        s,
        residue,
        ergodic: avg.average(&x),
        algebraic_residual,
        x,
        v,
    }
}

/// One explicit Euler step on `v` followed by the state solve.
///
/// Returns `None` when the residue at `state` is already below the underflow level.
pub fn flow_step(
    state: &TrajectoryRecord,
    x0: &Point,
    cfg: &FlowConfig,
    problem: &Problem,
) -> Result<Option<TrajectoryRecord>> {
    let mut avg = Average {
        weight: 0.0,
        moment: DVector::zeros(problem.dim()),
    };
    step_with_average(state, x0, cfg, problem, &mut avg)
}

fn step_with_average(
    state: &TrajectoryRecord,
    x0: &Point,
    cfg: &FlowConfig,
    problem: &Problem,
    avg: &mut Average,
) -> Result<Option<TrajectoryRecord>> {
    if state.residue < RESIDUE_UNDERFLOW {
        return Ok(None);
    }
    let h = cfg.step;
    let v_vec = state.v.as_vector() + (state.x.as_vector() - state.v.as_vector()) * h;
    let v = Point::from_vector(v_vec)?;
    let x = implicit_state_solve(&v, cfg.order, problem, cfg.inner_tol, &state.x)?;
    let p = cfg.order as f64;
    let w_new = problem.eval_vec(x.as_vector()).norm().powf((1.0 - p) / p);
    let w_new = if w_new.is_finite() { w_new } else { 0.0 };
    avg.weight += 0.5 * h * (state.weight + w_new);
    avg.moment += (state.x.as_vector() * state.weight + x.as_vector() * w_new) * (0.5 * h);
    Ok(Some(record_at(state.t + h, x, v, x0, cfg.order, problem, avg)))
}

/// Integrates from `v(0) = x0` to `t_max` or until the residue underflows.
pub fn run_flow(cfg: &FlowConfig, problem: &Problem, x0: &Point) -> Result<FlowRun> {
    cfg.validate()?;
    x0.ensure_dim(problem.dim())?;
    if problem.eval_vec(x0.as_vector()).norm() == 0.0 {
        return Err(Error::Config("flow start must not be a zero of F".into()));
    }
    let mut avg = Average {
        weight: 0.0,
        moment: DVector::zeros(problem.dim()),
    };
    let x_init = implicit_state_solve(x0, cfg.order, problem, cfg.inner_tol, x0)?;
    let first = record_at(0.0, x_init, x0.clone(), x0, cfg.order, problem, &avg);
    let res0 = first.residue;
    let p = cfg.order as f64;

    let mut diagnostics = FlowDiagnostics {
        max_residue_increase: f64::NEG_INFINITY,
        monotonicity_violations: 0,
        min_lower_bound_margin: (cfg.order >= 2).then_some(0.0),
        max_rescaling_error: 0.0,
        underflow: false,
    };
    let mut records = Vec::with_capacity(cfg.steps() + 1);
    records.push(first);
    for k in 0..cfg.steps() {
        let prev = records.last().expect("records start nonempty");
        let Some(next) = step_with_average(prev, x0, cfg, problem, &mut avg).map_err(|e| e.at(k + 1))? else {
            diagnostics.underflow = true;
            break;
        };
        let inc = next.residue - prev.residue;
        diagnostics.max_residue_increase = diagnostics.max_residue_increase.max(inc);
        if inc > MONOTONICITY_SLACK * res0 {
            diagnostics.monotonicity_violations += 1;
        }
        records.push(next);
    }
    for r in &records {
        if let Some(m) = diagnostics.min_lower_bound_margin.as_mut() {
            *m = m.min(r.residue - res0 * (-p * r.t / (p - 1.0)).exp());
        }
        if r.residue >= RESIDUE_UNDERFLOW {
            let err = rescaling_error(r, cfg.order) - rescaling_slack(r);
            diagnostics.max_rescaling_error = diagnostics.max_rescaling_error.max(err.max(0.0));
        }
    }
    if records.len() == 1 {
        diagnostics.max_residue_increase = 0.0;
    }
    Ok(FlowRun { records, diagnostics })
}

/// Distance between `x(t_max)` at steps `h` and `h/2`, and the implied
/// constant `C = distance / h`.
pub fn self_convergence(cfg: &FlowConfig, problem: &Problem, x0: &Point) -> Result<(f64, f64)> {
    let coarse = run_flow(cfg, problem, x0)?;
    let fine_cfg = FlowConfig { step: cfg.step / 2.0, ..cfg.clone() };
    let fine = run_flow(&fine_cfg, problem, x0)?;
    let a = coarse.records.last().expect("nonempty").x.as_vector();
    let b = fine.records.last().expect("nonempty").x.as_vector();
    let dist = (a - b).norm();
    Ok((dist, dist / cfg.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::FnOperator;
    use crate::zoo::{make_problem, ProblemDescriptor};
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn identity_1d(order: usize) -> Problem {
        let op = FnOperator::new(1, |x: &DVector<f64>| x.clone())
            .with_jacobian(|_: &DVector<f64>| DMatrix::identity(1, 1));
        Problem::new("identity", Arc::new(op), order, 1.0).unwrap()
    }

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) * f(lo) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn state_solve_examples() {
        let x = implicit_state_solve(&pt(&[2.0]), 1, &identity_1d(1), 1e-14, &pt(&[2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13);

        // x + |x - 2|(x - 2) = 0 on (0, 2)
        let oracle = bisect(|x| x + (x - 2.0).abs() * (x - 2.0), 0.0, 2.0);
        assert!((oracle - 1.0).abs() < 1e-12);
        let x2 = implicit_state_solve(&pt(&[2.0]), 2, &identity_1d(2), 1e-14, &pt(&[2.0])).unwrap();
        assert!((x2[0] - oracle).abs() < 1e-12);

        let z = implicit_state_solve(&pt(&[0.0]), 2, &identity_1d(2), 1e-14, &pt(&[5.0])).unwrap();
        assert_eq!(z.coords(), &[0.0]);
    }

    #[test]
    fn first_euler_step() {
        let problem = identity_1d(1);
        let run = run_flow(&FlowConfig::new(1, 0.1, 0.1), &problem, &pt(&[2.0])).unwrap();
        assert_eq!(run.records.len(), 2);
        assert!((run.records[0].x[0] - 1.0).abs() < 1e-12);
        assert!((run.records[1].v[0] - 1.9).abs() < 1e-12);
        assert!(run.diagnostics.min_lower_bound_margin.is_none());
    }

    #[test]
    fn zero_horizon_single_record() {
        let run = run_flow(&FlowConfig::new(2, 0.01, 0.0), &identity_1d(2), &pt(&[1.0])).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].t, 0.0);
    }

    #[test]
    fn stationary_start_rejected() {
        assert!(run_flow(&FlowConfig::new(2, 0.01, 1.0), &identity_1d(2), &pt(&[0.0])).is_err());
    }

    #[test]
    fn step_bound_enforced() {
        assert!(FlowConfig::new(2, 0.2, 1.0).validate().is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let desc = ProblemDescriptor::BilinearSaddle {
            coupling: dmatrix![1.0],
            b: dvector![0.0, 0.0],
        };
        let problem = make_problem(&desc, 2).unwrap();
        let x0 = pt(&[1.0, 0.5]);
        let run = run_flow(&FlowConfig::new(2, 0.01, 5.0), &problem, &x0).unwrap();
        assert_eq!(run.records.len(), 501);
        for r in &run.records {
            assert_eq!(r.s, r.v.as_vector() - x0.as_vector());
            let step = (r.x.as_vector() - r.v.as_vector()).norm();
            assert!((step - r.residue.sqrt()).abs() < 1e-8);
            assert!(r.algebraic_residual <= 1e-12 * (1.0 + 2.0));
        }
        let d = &run.diagnostics;
        assert_eq!(d.monotonicity_violations, 0);
        assert!(d.min_lower_bound_margin.unwrap() >= 0.0);
        assert!(d.max_rescaling_error < 1e-8);
    }

    #[test]
    fn halving_step_converges() {
        let problem = identity_1d(2);
        let cfg = FlowConfig::new(2, 0.02, 1.0);
        let (d1, _) = self_convergence(&cfg, &problem, &pt(&[2.0])).unwrap();
        let (d2, _) = self_convergence(&FlowConfig::new(2, 0.01, 1.0), &problem, &pt(&[2.0])).unwrap();
        assert!(d1 < 0.05);
        // first order: halving h roughly halves the gap
        assert!(d2 < 0.7 * d1, "{d1} {d2}");
    }
}
