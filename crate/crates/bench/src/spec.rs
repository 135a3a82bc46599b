//! Fully resolved experiment descriptions.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use dexp_core::de::SolverConfig;
use dexp_core::flow::FlowConfig;
use dexp_core::restart::{basin_radius, RestartConfig};
use dexp_core::zoo::{make_problem, ProblemDescriptor, ProblemKind, DEFAULT_BILINEAR_COND};
use dexp_core::{linalg, Point, Problem};

use crate::config::{parse_bool, Settings};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    De,
    Restart,
    Flow,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::De => "de",
            SolverKind::Restart => "restart",
            SolverKind::Flow => "flow",
        }
    }
}

impl FromStr for SolverKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "de" | "solve" => Ok(SolverKind::De),
            "restart" => Ok(SolverKind::Restart),
            "flow" => Ok(SolverKind::Flow),
            _ => Err(BenchError::Spec(format!("unknown solver `{s}` (de, restart, flow)"))),
        }
    }
}

/// Every key accepted in config files and as CLI overrides.
pub const KEYS: &[&str] = &[
    "problem",
    "solver",
    "dim",
    "seed",
    "p",
    "iters",
    "outer",
    "h",
    "t_max",
    "lambda_fraction",
    "residue_stop",
    "merit",
    "radius",
    "cond",
    "mu",
    "psd",
    "region",
    "start",
    "inner_tol",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub solver: SolverKind,
    pub dim: usize,
    pub seed: u64,
    pub order: usize,
    pub iters: usize,
    pub outer: usize,
    pub step: f64,
    pub t_max: f64,
    /// `None` selects the upper end of the admissible bracket.
    pub lambda_fraction: Option<f64>,
    pub residue_stop: f64,
    /// Evaluate the merit of the averaged iterate (affine problems only).
    pub merit: bool,
    /// Merit ball radius; `None` means `2 |x0 - x*|`.
    pub radius: Option<f64>,
    pub cond: f64,
    pub mu: f64,
    pub psd: f64,
    pub region: f64,
    /// Distance of the start from the solution; `None` uses the per-problem default.
    pub start: Option<f64>,
    pub inner_tol: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            problem: ProblemKind::Bilinear,
            solver: SolverKind::De,
            dim: 10,
            seed: 0,
            order: 1,
            iters: 1000,
            outer: 8,
            step: 1e-3,
            t_max: 10.0,
            lambda_fraction: None,
            residue_stop: 0.0,
            merit: true,
            radius: None,
            cond: DEFAULT_BILINEAR_COND,
            mu: 1.0,
            psd: 1.0,
            region: 1.0,
            start: None,
            inner_tol: 1e-12,
            out: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        for key in s.keys() {
            if !KEYS.contains(&key) {
                return Err(BenchError::Spec(format!("unknown key `{key}`")));
            }
        }
        let d = ExperimentSpec::default();
        let problem = match s.get("problem") {
            Some(v) => v
                .parse::<ProblemKind>()
                .map_err(|e| BenchError::Value { key: "problem".into(), value: v.into(), message: e.to_string() })?,
            None => d.problem,
        };
        let solver = match s.get("solver") {
            Some(v) => v.parse()?,
            None => d.solver,
        };
        let merit = match s.get("merit") {
            Some(v) => parse_bool("merit", v)?,
            None => d.merit,
        };
        let spec = ExperimentSpec {
            problem,
            solver,
            dim: s.parsed("dim")?.unwrap_or(d.dim),
            seed: s.parsed("seed")?.unwrap_or(d.seed),
            order: s.parsed("p")?.unwrap_or(d.order),
            iters: s.parsed("iters")?.unwrap_or(d.iters),
            outer: s.parsed("outer")?.unwrap_or(d.outer),
            step: s.parsed("h")?.unwrap_or(d.step),
            t_max: s.parsed("t_max")?.unwrap_or(d.t_max),
            lambda_fraction: s.parsed("lambda_fraction")?,
            residue_stop: s.parsed("residue_stop")?.unwrap_or(d.residue_stop),
            merit,
            radius: s.parsed("radius")?,
            cond: s.parsed("cond")?.unwrap_or(d.cond),
            mu: s.parsed("mu")?.unwrap_or(d.mu),
            psd: s.parsed("psd")?.unwrap_or(d.psd),
            region: s.parsed("region")?.unwrap_or(d.region),
            start: s.parsed("start")?,
            inner_tol: s.parsed("inner_tol")?.unwrap_or(d.inner_tol),
            out: s.get("out").map(PathBuf::from),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(BenchError::Spec("dim must be positive".into()));
        }
        if self.order == 0 {
            return Err(BenchError::Spec("p must be at least 1".into()));
        }
        if self.problem == ProblemKind::Bilinear && !self.dim.is_multiple_of(2) {
            return Err(BenchError::Spec("bilinear problems need an even dim".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` rendering of every field that affects results.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| format!("{x:e}"));
        let _ = writeln!(out, "problem={}", self.problem.name());
        let _ = writeln!(out, "solver={}", self.solver.name());
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "p={}", self.order);
        match self.solver {
            SolverKind::De => {
                let _ = writeln!(out, "iters={}", self.iters);
                let _ = writeln!(out, "lambda_fraction={}", opt(self.lambda_fraction));
                let _ = writeln!(out, "residue_stop={:e}", self.residue_stop);
            }
            SolverKind::Restart => {
                let _ = writeln!(out, "outer={}", self.outer);
                let _ = writeln!(out, "lambda_fraction={}", opt(self.lambda_fraction));
                let _ = writeln!(out, "residue_stop={:e}", self.residue_stop);
            }
            SolverKind::Flow => {
                let _ = writeln!(out, "h={:e}", self.step);
                let _ = writeln!(out, "t_max={:e}", self.t_max);
                let _ = writeln!(out, "inner_tol={:e}", self.inner_tol);
            }
        }
        let _ = writeln!(out, "merit={}", self.merit);
        let _ = writeln!(out, "radius={}", opt(self.radius));
        match self.problem {
            ProblemKind::Bilinear => {
                let _ = writeln!(out, "cond={:e}", self.cond);
            }
            ProblemKind::AffineMonotone => {
                let _ = writeln!(out, "psd={:e}", self.psd);
            }
            ProblemKind::StrongMonoAffine => {
                let _ = writeln!(out, "mu={:e}", self.mu);
            }
            ProblemKind::StrongMonoCubic => {
                let _ = writeln!(out, "mu={:e}", self.mu);
                let _ = writeln!(out, "region={:e}", self.region);
            }
            ProblemKind::CubicGrad | ProblemKind::ScalarCubed => {
                let _ = writeln!(out, "region={:e}", self.region);
            }
        }
        let _ = writeln!(out, "start={}", opt(self.start));
        out
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    pub fn descriptor(&self) -> Result<ProblemDescriptor> {
        let n = self.dim;
        Ok(match self.problem {
            ProblemKind::AffineMonotone => ProblemDescriptor::random_affine_monotone(n, self.psd, self.seed),
            ProblemKind::Bilinear => ProblemDescriptor::random_bilinear(n, self.cond, self.seed)?,
            ProblemKind::StrongMonoAffine => {
                ProblemDescriptor::random_strongly_monotone_affine(n, self.mu, self.seed)
            }
            ProblemKind::CubicGrad => ProblemDescriptor::CubicGrad { dim: n, radius: self.region },
            ProblemKind::ScalarCubed => ProblemDescriptor::ScalarCubed { dim: n, radius: self.region },
            ProblemKind::StrongMonoCubic => ProblemDescriptor::StrongMonoCubic {
                dim: n,
                mu: self.mu,
                radius: self.region,
            },
        })
    }

    pub fn build_problem(&self) -> Result<Problem> {
        Ok(make_problem(&self.descriptor()?, self.order)?)
    }

    fn is_affine(&self) -> bool {
        matches!(
            self.problem,
            ProblemKind::AffineMonotone | ProblemKind::Bilinear | ProblemKind::StrongMonoAffine
        )
    }

    /// The start `x0`.
    ///
    /// Affine problems start at the origin unless `start` is set. The local
    /// problems start at distance `region / 2` from the solution, or inside the
    /// fast-convergence basin for restarts. The direction is seeded.
    pub fn start_point(&self, problem: &Problem) -> Result<Point> {
        let n = problem.dim();
        let dist = match (self.start, problem.solution()) {
            (Some(d), Some(_)) => d,
            (Some(_), None) => {
                return Err(BenchError::Spec("start distance needs a known solution".into()))
            }
            (None, _) if self.is_affine() => return Ok(Point::zeros(n)),
            (None, _) => {
                let mut d = 0.5 * self.region;
                if self.solver == SolverKind::Restart {
                    let kappa = problem.lipschitz() / self.mu;
                    if let Some(b) = basin_radius(self.order, kappa) {
                        d = d.min(0.8 * b);
                    }
                }
                d
            }
        };
        let sol = problem.solution().map_or_else(|| nalgebra::DVector::zeros(n), |s| s.as_vector().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut dir = linalg::sample_ball(&mut rng, n, 1.0);
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        } else {
            dir[0] = 1.0;
        }
        Ok(Point::from_vector(sol + dir * dist)?)
    }

    pub fn solver_config(&self, problem: &Problem) -> SolverConfig {
        let mut cfg = SolverConfig::for_problem(problem, self.iters).with_residue_stop(self.residue_stop);
        if let Some(c) = self.lambda_fraction {
            cfg = cfg.with_lambda_fraction(c);
        }
        cfg
    }

    pub fn restart_config(&self, problem: &Problem) -> RestartConfig {
        let mu = problem.strong_monotonicity().unwrap_or(self.mu);
        let mut cfg = RestartConfig::new(self.order, problem.lipschitz(), mu, self.outer);
        if let Some(c) = self.lambda_fraction {
            cfg.inner.lambda_fraction = c;
        }
        cfg.stop_residue = self.residue_stop;
        cfg
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            order: self.order,
            step: self.step,
            t_max: self.t_max,
            inner_tol: self.inner_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_settings() {
        let spec = ExperimentSpec::from_settings(&Settings::new()).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let s = Settings::parse("iterations = 3").unwrap();
        assert!(ExperimentSpec::from_settings(&s).is_err());
    }

    #[test]
    fn hash_ignores_output_path_and_unused_keys() {
        let a = ExperimentSpec::default();
        let mut b = a.clone();
        b.out = Some("x.csv".into());
        b.step = 0.05;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn restart_start_is_in_basin() {
        let spec = ExperimentSpec {
            problem: ProblemKind::StrongMonoCubic,
            solver: SolverKind::Restart,
            dim: 3,
            order: 2,
            ..ExperimentSpec::default()
        };
        let problem = spec.build_problem().unwrap();
        let x0 = spec.start_point(&problem).unwrap();
        let basin = basin_radius(2, problem.lipschitz()).unwrap();
        assert!((x0.norm() - 0.8 * basin).abs() < 1e-12);
    }

    #[test]
    fn affine_default_start_is_origin() {
        let spec = ExperimentSpec::default();
        let problem = spec.build_problem().unwrap();
        assert_eq!(spec.start_point(&problem).unwrap(), Point::zeros(10));
    }
}
