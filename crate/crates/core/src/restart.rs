//! Restarted dual extrapolation: one iteration at a time, each from the latest point.
//!
//! Under strong monotonicity with modulus `mu` and `kappa = L / mu`, the errors
//! obey `e_{k+1} <= (4^p (2p+1) kappa / p!) e_k^p`.

use crate::certificate::{Certificate, CertificateReport};
use crate::de::{run_de, SolverConfig, Termination};
use crate::error::{Error, Result};
use crate::linalg::factorial;
use crate::operator::Problem;
use crate::point::Point;

/// Absolute error below which steps are not checked against the local bound.
pub const CERTIFICATE_FLOOR: f64 = 1e-13;
/// Slack added to the local bound.
pub const CERTIFICATE_SLACK: f64 = 1e-12;
/// Relative error floor for order estimation, scaled by `1 + |x*|`.
pub const ORDER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RestartConfig {
    pub inner: SolverConfig,
    pub outer_iters: usize,
    /// Strong monotonicity modulus; only used by certificates.
    pub mu: f64,
    pub stop_residue: f64,
}

impl RestartConfig {
    pub fn new(order: usize, lipschitz: f64, mu: f64, outer_iters: usize) -> Self {
        RestartConfig {
            inner: SolverConfig::new(order, lipschitz, 1),
            outer_iters,
            mu,
            stop_residue: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.inner.max_iters != 1 {
            return Err(Error::Config(format!(
                "restart inner budget must be 1, got {}",
                self.inner.max_iters
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.stop_residue >= 0.0) {
            return Err(Error::Config("stop_residue must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.inner.lipschitz / self.mu
    }
}

#[derive(Debug, Clone)]
pub struct RestartTrace {
    pub points: Vec<Point>,
    /// `|x_k - x*|`, empty when the solution is unknown.
    pub errors: Vec<f64>,
    pub residues: Vec<f64>,
    pub termination: Termination,
}

/// `4^p (2p+1) kappa / p!`.
pub fn local_rate_constant(order: usize, kappa: f64) -> f64 {
    4f64.powi(order as i32) * (2.0 * order as f64 + 1.0) * kappa / factorial(order)
}

/// Largest initial error for which the local bound forces order-`p` decay (`p >= 2`).
pub fn basin_radius(order: usize, kappa: f64) -> Option<f64> {
    (order >= 2).then(|| 0.5 * (1.0 / local_rate_constant(order, kappa)).powf(1.0 / (order as f64 - 1.0)))
}

pub fn run_restart(cfg: &RestartConfig, problem: &Problem, x0: &Point) -> Result<RestartTrace> {
    cfg.validate()?;
    x0.ensure_dim(problem.dim())?;
    let error_of = |x: &Point| problem.solution().map(|s| (x.as_vector() - s.as_vector()).norm());
    let residue_of = |x: &Point| problem.eval_vec(x.as_vector()).norm();

    let mut trace = RestartTrace {
        points: vec![x0.clone()],
        errors: error_of(x0).into_iter().collect(),
        residues: vec![residue_of(x0)],
        termination: Termination::Budget,
    };
    let mut x = x0.clone();
    for k in 0..cfg.outer_iters {
        let res = *trace.residues.last().expect("trace is never empty");
        if res == 0.0 {
            trace.termination = Termination::ExactZero;
            return Ok(trace);
        }
        if res <= cfg.stop_residue {
            trace.termination = Termination::ResidueStop;
            return Ok(trace);
        }
        let run = run_de(&cfg.inner, problem, &x).map_err(|e| e.at(k))?;
        x = run.last;
        trace.residues.push(residue_of(&x));
        if let Some(e) = error_of(&x) {
            trace.errors.push(e);
        }
        trace.points.push(x.clone());
        if run.termination == Termination::ExactZero {
            trace.termination = Termination::ExactZero;
            return Ok(trace);
        }
    }
    let res = *trace.residues.last().expect("trace is never empty");
    if res == 0.0 {
        trace.termination = Termination::ExactZero;
    } else if res <= cfg.stop_residue {
        trace.termination = Termination::ResidueStop;
    }
    Ok(trace)
}

pub mod names {
    pub const LOCAL_RATE: &str = "local_rate";
    pub const BASIN: &str = "basin";
    pub const RESIDUE_DECREASE: &str = "residue_decrease";
}

/// Per-step bound `e_{k+1} <= C e_k^p + 1e-12` over steps with `e_k >= 1e-13`,
/// the basin condition on `e_0` when `p >= 2`, and nonincreasing residues.
///
/// Returns an error when the trace carries no error sequence.
pub fn certify_local_rate(
    trace: &RestartTrace,
    order: usize,
    lipschitz: f64,
    mu: f64,
) -> Result<CertificateReport> {
    if trace.errors.len() != trace.points.len() {
        return Err(Error::Config("local rate certificate needs the solution".into()));
    }
    let kappa = lipschitz / mu;
    let c = local_rate_constant(order, kappa);
    let mut report = CertificateReport::default();

    let mut rate = Certificate::new(names::LOCAL_RATE);
    for (k, w) in trace.errors.windows(2).enumerate() {
        if w[0] >= CERTIFICATE_FLOOR {
            rate.check_with_slack(k, w[1], c * w[0].powi(order as i32), CERTIFICATE_SLACK);
        }
    }
    report.push(rate);

    if let (Some(radius), Some(&e0)) = (basin_radius(order, kappa), trace.errors.first()) {
        let mut basin = Certificate::new(names::BASIN);
        basin.check_with_slack(0, e0, radius, 0.0);
        report.push(basin);
    }

    let mut decrease = Certificate::new(names::RESIDUE_DECREASE);
    for (k, w) in trace.residues.windows(2).enumerate() {
        decrease.check(k, w[1], w[0]);
    }
    report.push(decrease);
    Ok(report)
}

/// Margins `C e_k^p + slack - e_{k+1}` per step, `None` where the step is below the floor.
pub fn local_rate_margins(trace: &RestartTrace, order: usize, kappa: f64) -> Vec<Option<f64>> {
    let c = local_rate_constant(order, kappa);
    trace
        .errors
        .windows(2)
        .map(|w| {
            (w[0] >= CERTIFICATE_FLOOR)
                .then(|| c * w[0].powi(order as i32) + CERTIFICATE_SLACK - w[1])
        })
        .collect()
}

/// Least-squares slope of `ln e_{k+1}` against `ln e_k` over pairs above the
/// error floor. `None` with fewer than two usable pairs.
pub fn estimate_order(errors: &[f64], solution_norm: f64) -> Option<f64> {
    let floor = ORDER_FLOOR * (1.0 + solution_norm);
    let pairs: Vec<(f64, f64)> = errors
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{make_problem, ProblemDescriptor};
    use nalgebra::dvector;

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn constants() {
        assert_eq!(local_rate_constant(2, 1.0), 40.0);
        assert_eq!(local_rate_constant(1, 1.0), 12.0);
        assert_eq!(basin_radius(2, 1.0), Some(1.0 / 80.0));
        assert_eq!(basin_radius(1, 1.0), None);
    }

    #[test]
    fn single_point_trace_passes() {
        let trace = RestartTrace {
            points: vec![pt(&[0.0])],
            errors: vec![0.0],
            residues: vec![0.0],
            termination: Termination::ExactZero,
        };
        let report = certify_local_rate(&trace, 2, 1.0, 1.0).unwrap();
        assert!(report.all_passed());
        assert_eq!(report.get(names::LOCAL_RATE).unwrap().checked, 0);
    }

    #[test]
    fn start_at_solution_stops() {
        let desc = ProblemDescriptor::StrongMonoCubic { dim: 1, mu: 1.0, radius: 1.0 };
        let problem = make_problem(&desc, 2).unwrap();
        let cfg = RestartConfig::new(2, problem.lipschitz(), 1.0, 10);
        let trace = run_restart(&cfg, &problem, &pt(&[0.0])).unwrap();
        assert_eq!(trace.points.len(), 1);
        assert_eq!(trace.termination, Termination::ExactZero);
    }

    #[test]
    fn first_order_step_matches_single_iteration() {
        let desc = ProblemDescriptor::StronglyMonotoneAffine {
            mu: 1.0,
            skew: None,
            b: dvector![-1.0],
        };
        let problem = make_problem(&desc, 1).unwrap();
        let cfg = RestartConfig::new(1, 1.0, 1.0, 20);
        let trace = run_restart(&cfg, &problem, &pt(&[0.0])).unwrap();
        // one iteration from x: x + (1 - x)/2, so the error halves
        assert!((trace.points[1][0] - 0.5).abs() < 1e-15);
        for w in trace.errors.windows(2) {
            assert!((w[1] - 0.5 * w[0]).abs() < 1e-15);
        }
        let report = certify_local_rate(&trace, 1, 1.0, 1.0).unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn quadratic_decay_on_cubic() {
        let desc = ProblemDescriptor::StrongMonoCubic { dim: 1, mu: 1.0, radius: 1.0 };
        let problem = make_problem(&desc, 2).unwrap();
        let cfg = RestartConfig::new(2, problem.lipschitz(), 1.0, 8);
        let trace = run_restart(&cfg, &problem, &pt(&[0.4])).unwrap();
        let order = estimate_order(&trace.errors, 0.0).unwrap();
        assert!(order > 1.8, "order {order}, errors {:?}", trace.errors);
    }

    #[test]
    fn order_of_exact_power_sequence() {
        let errs: Vec<f64> = (0..5).map(|k| 0.1f64.powi(2i32.pow(k))).collect();
        let order = estimate_order(&errs, 0.0).unwrap();
        assert!((order - 2.0).abs() < 1e-9);
        assert!(estimate_order(&[1.0, 0.5], 0.0).is_none());
    }

    #[test]
    fn inner_budget_must_be_one() {
        let mut cfg = RestartConfig::new(2, 1.0, 1.0, 3);
        cfg.inner.max_iters = 2;
        assert!(cfg.validate().is_err());
    }
}
