//! The p-th order dual extrapolation loop.
//!
//! Each iteration extrapolates `v = x0 + s`, solves the regularized Taylor
//! model around `v` exactly, picks the step weight `lambda` from the admissible
//! bracket and accumulates `s <- s - lambda F(x)`.

use nalgebra::DVector;

use crate::certificate::{Certificate, CertificateReport};
use crate::error::{Error, Result};
use crate::linalg::factorial;
use crate::operator::Problem;
use crate::point::Point;
use crate::taylor::{self, TaylorModel, DEFAULT_TOL_R, MODEL_RESIDUAL_TOL};

/// Step length below which `x = v` is treated as an exact zero, relative to `1 + |v|`.
pub const EXACT_ZERO_STEP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub order: usize,
    pub lipschitz: f64,
    pub max_iters: usize,
    /// Stop once `|F(x_k)|` drops to this value; 0 disables the test.
    pub residue_stop: f64,
    /// `c_p` in `lambda L |x - v|^{p-1} / p! = c_p`.
    pub lambda_fraction: f64,
    pub tol_sub: f64,
    pub tol_r: f64,
    /// Newton iterations allowed to the generic subproblem solver.
    pub max_inner: usize,
}

impl SolverConfig {
    pub fn new(order: usize, lipschitz: f64, max_iters: usize) -> Self {
        SolverConfig {
            order,
            lipschitz,
            max_iters,
            residue_stop: 0.0,
            lambda_fraction: Self::upper_fraction(order.max(1)),
            tol_sub: MODEL_RESIDUAL_TOL,
            tol_r: DEFAULT_TOL_R,
            max_inner: 100,
        }
    }

    /// Config using the order and constant declared by `problem`.
    pub fn for_problem(problem: &Problem, max_iters: usize) -> Self {
        Self::new(problem.order(), problem.lipschitz(), max_iters)
    }

    pub fn lower_fraction(order: usize) -> f64 {
        1.0 / (12.0 * order as f64 - 6.0)
    }

    pub fn upper_fraction(order: usize) -> f64 {
        1.0 / (4.0 * order as f64 + 2.0)
    }

    pub fn with_lambda_fraction(mut self, c: f64) -> Self {
        self.lambda_fraction = c;
        self
    }

    pub fn with_residue_stop(mut self, stop: f64) -> Self {
        self.residue_stop = stop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::Config(format!(
                "lipschitz must be positive, got {}",
                self.lipschitz
            )));
        }
        let (lo, hi) = (Self::lower_fraction(self.order), Self::upper_fraction(self.order));
        let c = self.lambda_fraction;
        // p = 1 collapses the bracket to a point; allow rounding there
        let eps = 1e-15 * hi;
        if !(c >= lo - eps && c <= hi + eps) {
            return Err(Error::Config(format!(
                "lambda fraction {c} outside [{lo}, {hi}] for p = {}",
                self.order
            )));
        }
        if !(self.residue_stop >= 0.0) {
            return Err(Error::Config("residue_stop must be nonnegative".into()));
        }
        if !(self.tol_sub > 0.0 && self.tol_r > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// `lambda L r^{p-1} / p!` for a given `lambda` and step length `r`.
    pub fn bracket_value(&self, lambda: f64, step_norm: f64) -> f64 {
        lambda * self.lipschitz * step_norm.powi(self.order as i32 - 1) / factorial(self.order)
    }
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub k: usize,
    pub x: Point,
    pub v: Point,
    pub s: DVector<f64>,
    pub fx: DVector<f64>,
    pub lambda: f64,
    pub residue: f64,
    pub step_norm: f64,
    /// `E_k = |s_k|^2 / 2`.
    pub lyapunov: f64,
    pub cum_lambda: f64,
    /// `|F_v(x)|` left by the subproblem solver.
    pub model_residual: f64,
    /// `|F(v)|`, the scale of the subproblem tolerance.
    pub center_residue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Budget,
    ResidueStop,
    ExactZero,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Budget => "budget",
            Termination::ResidueStop => "residue_stop",
            Termination::ExactZero => "exact_zero",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x0: Point,
    pub records: Vec<IterateRecord>,
    /// `lambda`-weighted average of `x_1..x_T`; `None` without iterations.
    pub ergodic: Option<Point>,
    pub last: Point,
    pub termination: Termination,
}

/// Outcome of a single iteration.
#[derive(Debug, Clone)]
pub enum Step {
    Advanced(IterateRecord),
    /// `F(v) = 0`; the extrapolated point solves the problem.
    ExactZero(Point),
}

/// `lambda = c_p p! / (L r^{p-1})`.
pub fn select_lambda(cfg: &SolverConfig, step_norm: f64) -> Result<f64> {
    if !(step_norm > 0.0 && step_norm.is_finite()) {
        return Err(Error::Config(format!(
            "step length must be positive to set lambda, got {step_norm}"
        )));
    }
    Ok(cfg.lambda_fraction * factorial(cfg.order)
        / (cfg.lipschitz * step_norm.powi(cfg.order as i32 - 1)))
}

/// One iteration from dual state `s_k`. `k` is the index of the new iterate.
pub fn de_step(
    x0: &Point,
    s: &DVector<f64>,
    prev_cum_lambda: f64,
    k: usize,
    cfg: &SolverConfig,
    problem: &Problem,
) -> Result<Step> {
    let step = || -> Result<Step> {
        let v = Point::from_vector(x0.as_vector() + s)?;
        let model = TaylorModel::with_constants(problem, &v, cfg.order, cfg.lipschitz)?;
        let center_residue = model.value_at_center().norm();
        if center_residue == 0.0 {
            return Ok(Step::ExactZero(v));
        }
        let sol = taylor::solve_model(&model, cfg.tol_r, cfg.tol_sub, cfg.max_inner)?;
        if sol.step_norm < EXACT_ZERO_STEP * (1.0 + v.norm()) {
            return Ok(Step::ExactZero(v));
        }
        let lambda = select_lambda(cfg, sol.step_norm)?;
        let fx = problem.eval_vec(sol.x.as_vector());
        if fx.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("F(x)"));
        }
        let s_next = s - &fx * lambda;
        Ok(Step::Advanced(IterateRecord {
            k,
            residue: fx.norm(),
            lyapunov: 0.5 * s_next.norm_squared(),
            s: s_next,
            fx,
            x: sol.x,
            v,
            lambda,
            step_norm: sol.step_norm,
            cum_lambda: prev_cum_lambda + lambda,
            model_residual: sol.model_residual,
            center_residue,
        }))
    };
    step().map_err(|e| e.at(k))
}

/// Runs up to `cfg.max_iters` iterations from `x0` with `s_0 = 0`.
pub fn run_de(cfg: &SolverConfig, problem: &Problem, x0: &Point) -> Result<RunResult> {
    cfg.validate()?;
    x0.ensure_dim(problem.dim())?;
    let mut records: Vec<IterateRecord> = Vec::with_capacity(cfg.max_iters.min(1 << 20));
    let mut s = DVector::zeros(problem.dim());
    let mut cum = 0.0;
    let mut last = x0.clone();
    let mut termination = Termination::Budget;

    if cfg.max_iters > 0 {
        let r0 = problem.eval_vec(x0.as_vector()).norm();
        if r0 == 0.0 {
            termination = Termination::ExactZero;
        } else if r0 <= cfg.residue_stop {
            termination = Termination::ResidueStop;
        }
    }

    if termination == Termination::Budget {
        for k in 1..=cfg.max_iters {
            match de_step(x0, &s, cum, k, cfg, problem)? {
                Step::ExactZero(v) => {
                    last = v;
                    termination = Termination::ExactZero;
                    break;
                }
                Step::Advanced(rec) => {
                    s.copy_from(&rec.s);
                    cum = rec.cum_lambda;
                    last = rec.x.clone();
                    let stop = rec.residue <= cfg.residue_stop;
                    records.push(rec);
                    if stop {
                        termination = Termination::ResidueStop;
                        break;
                    }
                }
            }
        }
    }

    let ergodic = ergodic_path(&records).last().cloned();
    Ok(RunResult {
        x0: x0.clone(),
        records,
        ergodic,
        last,
        termination,
    })
}

/// Running `lambda`-weighted averages `x~_1, ..., x~_T`.
pub fn ergodic_path(records: &[IterateRecord]) -> Vec<Point> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let mut acc = DVector::zeros(first.x.dim());
    let mut weight = 0.0;
    records
        .iter()
        .map(|r| {
            acc += r.x.as_vector() * r.lambda;
            weight += r.lambda;
            Point::from_vector(&acc / weight).expect("average of finite points is finite")
        })
        .collect()
}

/// Running infimum `min_{i <= k} |F(x_i)|`.
pub fn running_infimum(records: &[IterateRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    records
        .iter()
        .map(|r| {
            best = best.min(r.residue);
            best
        })
        .collect()
}

/// Certificate names produced by [`certify_run`].
pub mod names {
    pub const DESCENT_PROBE: &str = "descent_identity(probe)";
    pub const DESCENT_SOLUTION: &str = "descent_identity(solution)";
    pub const GAP_PROBE: &str = "weighted_gap(probe)";
    pub const GAP_SOLUTION: &str = "weighted_gap(solution)";
    pub const STEP_SUM: &str = "step_sum";
    pub const LAMBDA_SUM: &str = "lambda_sum";
    pub const RESIDUE_ENVELOPE: &str = "residue_envelope";
    pub const BRACKET: &str = "lambda_bracket";
    pub const SUBPROBLEM: &str = "subproblem_residual";
}

/// Checks the per-prefix inequalities that drive the convergence proof.
///
/// For every prefix `T'` and a reference point `x` (the probe, and the known
/// solution when present):
///
/// * `sum lambda_k <F(x_k), x_k - x> + (1/24) sum |x_k - v_k|^2 <= E_0 - E_T' + <s_T', x - x0>`
/// * `sum lambda_k <F(x_k), x_k - x> <= |x - x0|^2 / 2`
///
/// and, when `x*` is known,
///
/// * `sum |x_k - v_k|^2 <= 12 |x* - x0|^2`
/// * `sum lambda_k >= p!/((12p - 6) L) (12 |x* - x0|^2)^{-(p-1)/2} T'^{(p+1)/2}`
/// * `min_{i <= k} |F(x_i)| <= ((2p+1) L / p!) (12 |x* - x0|^2 / k)^{p/2}`.
///
/// The bracket on `lambda` and the subproblem residual are checked per iterate.
pub fn certify_run(
    result: &RunResult,
    cfg: &SolverConfig,
    problem: &Problem,
    probe: &Point,
) -> Result<CertificateReport> {
    probe.ensure_dim(problem.dim())?;
    let x0 = result.x0.as_vector();
    let p = cfg.order;
    let l = cfg.lipschitz;
    let mut report = CertificateReport::default();

    let mut refs: Vec<(&str, &str, &DVector<f64>)> =
        vec![(names::DESCENT_PROBE, names::GAP_PROBE, probe.as_vector())];
    if let Some(sol) = problem.solution() {
        refs.push((names::DESCENT_SOLUTION, names::GAP_SOLUTION, sol.as_vector()));
    }
    for (descent_name, gap_name, x) in refs {
        let mut descent = Certificate::new(descent_name);
        let mut gap = Certificate::new(gap_name);
        let half_dist = 0.5 * (x - x0).norm_squared();
        let mut weighted = 0.0;
        let mut steps = 0.0;
        for r in &result.records {
            weighted += r.lambda * r.fx.dot(&(r.x.as_vector() - x));
            steps += r.step_norm * r.step_norm;
            let rhs = -r.lyapunov + r.s.dot(&(x - x0));
            descent.check(r.k, weighted + steps / 24.0, rhs);
            gap.check(r.k, weighted, half_dist);
        }
        report.push(descent);
        report.push(gap);
    }

    if let Some(sol) = problem.solution() {
        let d0sq = (sol.as_vector() - x0).norm_squared();
        let mut step_sum = Certificate::new(names::STEP_SUM);
        let mut lambda_sum = Certificate::new(names::LAMBDA_SUM);
        let mut envelope = Certificate::new(names::RESIDUE_ENVELOPE);
        let pf = p as f64;
        let fact = factorial(p);
        let mut steps = 0.0;
        let mut inf = f64::INFINITY;
        for (i, r) in result.records.iter().enumerate() {
            let t = (i + 1) as f64;
            steps += r.step_norm * r.step_norm;
            step_sum.check(r.k, steps, 12.0 * d0sq);
            let lower = fact / ((12.0 * pf - 6.0) * l)
                * (12.0 * d0sq).powf(-(pf - 1.0) / 2.0)
                * t.powf((pf + 1.0) / 2.0);
            lambda_sum.check(r.k, lower, r.cum_lambda);
            inf = inf.min(r.residue);
            let bound = (2.0 * pf + 1.0) * l / fact * (12.0 * d0sq / t).powf(pf / 2.0);
            envelope.check(r.k, inf, bound);
        }
        report.push(step_sum);
        report.push(lambda_sum);
        report.push(envelope);
    }

    let mut bracket = Certificate::new(names::BRACKET);
    let mut subproblem = Certificate::new(names::SUBPROBLEM);
    let (lo, hi) = (SolverConfig::lower_fraction(p), SolverConfig::upper_fraction(p));
    for r in &result.records {
        let b = cfg.bracket_value(r.lambda, r.step_norm);
        bracket.check_with_slack(r.k, lo, b, 1e-12 * lo);
        bracket.check_with_slack(r.k, b, hi, 1e-12 * hi);
        subproblem.check_with_slack(
            r.k,
            r.model_residual,
            cfg.tol_sub * (1.0 + r.center_residue),
            0.0,
        );
    }
    report.push(bracket);
    report.push(subproblem);
    Ok(report)
}
