//! Runs one experiment end to end: problem, solver, CSV rows, certificates.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use dexp_core::certificate::{Certificate, CertificateReport};
use dexp_core::de::{certify_run, ergodic_path, run_de, running_infimum};
use dexp_core::flow::{rescaling_error, rescaling_slack, run_flow, MONOTONICITY_SLACK};
use dexp_core::merit::{AffineMerit, MeritSpec};
use dexp_core::restart::{certify_local_rate, estimate_order, local_rate_margins, run_restart};
use dexp_core::{Point, Problem};

use crate::csvout::{render_csv, write_file, DeRow, FlowRow, RestartRow};
use crate::error::Result;
use crate::rates::{default_window, fit_power_law, RateFit};
use crate::spec::{ExperimentSpec, SolverKind};

/// Projected-gradient tolerance for merit evaluations.
pub const MERIT_TOL: f64 = 1e-9;
/// Flow lower-bound slack relative to the initial residue.
pub const LOWER_BOUND_SLACK: f64 = 1e-6;
/// Tolerance on `lambda |x - v|^{p-1} = 1` along the flow.
pub const RESCALING_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Summary {
    pub hash: String,
    pub solver: SolverKind,
    pub problem: String,
    pub termination: String,
    pub rows: usize,
    pub final_residue: f64,
    pub certificates: CertificateReport,
    pub fits: Vec<RateFit>,
    pub order_estimate: Option<f64>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.certificates.all_passed()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} [{}]: termination={} rows={} final_residue={:e} certificates={}",
            self.solver.name(),
            self.problem,
            self.hash,
            self.termination,
            self.rows,
            self.final_residue,
            if self.passed() { "pass" } else { "FAIL" }
        )?;
        for c in &self.certificates.certificates {
            writeln!(f, "  {c}")?;
        }
        for fit in &self.fits {
            writeln!(f, "  fit {fit}")?;
        }
        if let Some(q) = self.order_estimate {
            writeln!(f, "  estimated order {q:.4}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: String,
    pub summary: Summary,
}

/// Exact merit evaluator when the problem is affine and a radius is available.
fn merit_evaluator(spec: &ExperimentSpec, problem: &Problem, x0: &Point) -> Result<Option<AffineMerit>> {
    if !spec.merit || problem.operator().affine_parts().is_none() {
        return Ok(None);
    }
    let merit_spec = match (spec.radius, problem.solution()) {
        (Some(d), _) => MeritSpec::new(problem, x0.clone(), d)?,
        (None, Some(_)) => MeritSpec::with_default_radius(problem, x0.clone())?,
        (None, None) => return Ok(None),
    };
    Ok(Some(AffineMerit::new(&merit_spec)?))
}

fn fit_if_possible(fits: &mut Vec<RateFit>, column: &str, xs: &[f64], ys: &[f64], window: (f64, f64)) {
    if let Ok(fit) = fit_power_law(column, xs, ys, window.0, window.1) {
        fits.push(fit);
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Outcome> {
    let problem = spec.build_problem()?;
    let x0 = spec.start_point(&problem)?;
    match spec.solver {
        SolverKind::De => run_de_experiment(spec, &problem, &x0),
        SolverKind::Restart => run_restart_experiment(spec, &problem, &x0),
        SolverKind::Flow => run_flow_experiment(spec, &problem, &x0),
    }
}

fn run_de_experiment(spec: &ExperimentSpec, problem: &Problem, x0: &Point) -> Result<Outcome> {
    let cfg = spec.solver_config(problem);
    let result = run_de(&cfg, problem, x0)?;
    let certificates = certify_run(&result, &cfg, problem, x0)?;
    let merit = merit_evaluator(spec, problem, x0)?;
    let inf = running_infimum(&result.records);
    let merits: Vec<Option<f64>> = match &merit {
        Some(m) => ergodic_path(&result.records)
            .iter()
            .map(|x| m.evaluate(x, MERIT_TOL).map(Some))
            .collect::<std::result::Result<_, _>>()?,
        None => vec![None; result.records.len()],
    };
    let rows: Vec<DeRow> = result
        .records
        .iter()
        .zip(&inf)
        .zip(&merits)
        .map(|((r, inf), m)| DeRow {
            k: r.k,
            lambda: r.lambda,
            residue: r.residue,
            inf_residue: *inf,
            step_norm: r.step_norm,
            lyapunov: r.lyapunov,
            cum_lambda: r.cum_lambda,
            merit_ergodic: *m,
        })
        .collect();

    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let window = default_window(spec.iters as f64);
    let mut fits = Vec::new();
    fit_if_possible(&mut fits, "inf_residue", &ks, &inf, window);
    if merit.is_some() {
        let ms: Vec<f64> = merits.iter().map(|m| m.unwrap_or(f64::NAN)).collect();
        fit_if_possible(&mut fits, "merit_ergodic", &ks, &ms, window);
    }

    let final_residue = problem.eval(&result.last)?.norm();
    Ok(Outcome {
        csv: render_csv(&rows),
        summary: Summary {
            hash: spec.hash(),
            solver: spec.solver,
            problem: problem.name().to_string(),
            termination: result.termination.to_string(),
            rows: rows.len(),
            final_residue,
            certificates,
            fits,
            order_estimate: None,
        },
    })
}

fn run_restart_experiment(spec: &ExperimentSpec, problem: &Problem, x0: &Point) -> Result<Outcome> {
    let cfg = spec.restart_config(problem);
    let trace = run_restart(&cfg, problem, x0)?;
    let (certificates, margins, order) = if problem.solution().is_some() {
        let report = certify_local_rate(&trace, cfg.inner.order, cfg.inner.lipschitz, cfg.mu)?;
        let margins = local_rate_margins(&trace, cfg.inner.order, cfg.kappa());
        let sol_norm = problem.solution().map_or(0.0, |s| s.norm());
        (report, margins, estimate_order(&trace.errors, sol_norm))
    } else {
        (CertificateReport::default(), Vec::new(), None)
    };
    let rows: Vec<RestartRow> = (0..trace.points.len())
        .map(|k| RestartRow {
            k,
            error: trace.errors.get(k).copied(),
            residue: trace.residues[k],
            cert_margin: k.checked_sub(1).and_then(|j| margins.get(j).copied().flatten()),
        })
        .collect();
    Ok(Outcome {
        csv: render_csv(&rows),
        summary: Summary {
            hash: spec.hash(),
            solver: spec.solver,
            problem: problem.name().to_string(),
            termination: trace.termination.to_string(),
            rows: rows.len(),
            final_residue: *trace.residues.last().expect("trace is never empty"),
            certificates,
            fits: Vec::new(),
            order_estimate: order,
        },
    })
}

pub mod flow_names {
    pub const MONOTONE: &str = "residue_nonincreasing";
    pub const LOWER_BOUND: &str = "exponential_lower_bound";
    pub const RESCALING: &str = "rescaling_identity";
}

fn run_flow_experiment(spec: &ExperimentSpec, problem: &Problem, x0: &Point) -> Result<Outcome> {
    let cfg = spec.flow_config();
    let run = run_flow(&cfg, problem, x0)?;
    let records = &run.records;
    let res0 = records[0].residue;
    let p = cfg.order as f64;
    let merit = merit_evaluator(spec, problem, x0)?;

    let mut monotone = Certificate::new(flow_names::MONOTONE);
    for (i, w) in records.windows(2).enumerate() {
        monotone.check_with_slack(i + 1, w[1].residue, w[0].residue, MONOTONICITY_SLACK * res0);
    }
    let mut lower = Certificate::new(flow_names::LOWER_BOUND);
    let mut rescaling = Certificate::new(flow_names::RESCALING);
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let margin = (cfg.order >= 2).then(|| r.residue - res0 * (-p * r.t / (p - 1.0)).exp());
        if let Some(m) = margin {
            lower.check_with_slack(i, -m, 0.0, LOWER_BOUND_SLACK * res0);
        }
        rescaling.check_with_slack(i, rescaling_error(r, cfg.order), 0.0, RESCALING_TOL + rescaling_slack(r));
        let merit_ergodic = match &merit {
            Some(m) => Some(m.evaluate(&r.ergodic, MERIT_TOL)?),
            None => None,
        };
        rows.push(FlowRow {
            t: r.t,
            residue: r.residue,
            lower_bound_margin: margin,
            lyapunov: r.lyapunov,
            lambda: r.lambda,
            merit_ergodic,
        });
    }
    let mut certificates = CertificateReport::default();
    certificates.push(monotone);
    if cfg.order >= 2 {
        certificates.push(lower);
    }
    certificates.push(rescaling);

    let mut fits = Vec::new();
    if merit.is_some() {
        let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let ms: Vec<f64> = rows.iter().map(|r| r.merit_ergodic.unwrap_or(f64::NAN)).collect();
        fit_if_possible(&mut fits, "merit_ergodic", &ts, &ms, (1.0, cfg.t_max));
    }
    let termination = if run.diagnostics.underflow { "underflow" } else { "t_max" };
    Ok(Outcome {
        csv: render_csv(&rows),
        summary: Summary {
            hash: spec.hash(),
            solver: spec.solver,
            problem: problem.name().to_string(),
            termination: termination.to_string(),
            rows: rows.len(),
            final_residue: records.last().expect("flow records are nonempty").residue,
            certificates,
            fits,
            order_estimate: None,
        },
    })
}

/// Runs the experiment and writes its CSV to `spec.out` when set.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<Outcome> {
    let outcome = run_experiment(spec)?;
    if let Some(path) = &spec.out {
        write_file(path, &outcome.csv)?;
    }
    Ok(outcome)
}

#[derive(Debug)]
pub struct BatchEntry {
    pub hash: String,
    pub path: PathBuf,
    pub result: Result<Summary>,
}

pub const INDEX_FILE: &str = "index.csv";

/// Runs specs concurrently, each writing `<hash>.csv` under `out_dir`, then
/// writes `index.csv` serially in input order. Duplicate specs run once.
pub fn run_batch(specs: &[ExperimentSpec], out_dir: &Path) -> Result<Vec<BatchEntry>> {
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&ExperimentSpec> = specs.iter().filter(|s| seen.insert(s.hash())).collect();
    let entries: Vec<BatchEntry> = unique
        .par_iter()
        .map(|spec| {
            let hash = spec.hash();
            let path = out_dir.join(format!("{hash}.csv"));
            let result = run_experiment(spec).and_then(|o| {
                write_file(&path, &o.csv)?;
                Ok(o.summary)
            });
            BatchEntry { hash, path, result }
        })
        .collect();

    let mut index = String::from("hash,problem,solver,termination,rows,final_residue,certificates\n");
    for e in &entries {
        match &e.result {
            Ok(s) => index.push_str(&format!(
                "{},{},{},{},{},{:e},{}\n",
                e.hash,
                s.problem,
                s.solver.name(),
                s.termination,
                s.rows,
                s.final_residue,
                if s.passed() { "pass" } else { "fail" }
            )),
            Err(err) => index.push_str(&format!(
                "{},,,error,,,{}\n",
                e.hash,
                err.to_string().replace([',', '\n'], ";")
            )),
        }
    }
    write_file(&out_dir.join(INDEX_FILE), &index)?;
    Ok(entries)
}
