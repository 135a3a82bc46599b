use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dexp_bench::rates::{default_window, fit_rate_slope};
use dexp_bench::spec::SolverKind;
use dexp_bench::{run_and_write, run_batch, ExperimentSpec, Settings};
use dexp_core::zoo::ProblemKind;

#[derive(Parser)]
#[command(name = "dexp", version, about = "Dual extrapolation solvers and convergence benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the dual extrapolation method and write one CSV row per iteration.
    Solve(RunArgs),
    /// Run the restarted method and check the local rate bound.
    Restart(RunArgs),
    /// Integrate the continuous-time flow.
    Flow(RunArgs),
    /// Fit a log-log slope to a CSV column.
    Rates(RatesArgs),
    /// Run an experiment and report only its certificates.
    Certify {
        #[arg(long, default_value = "de")]
        solver: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Problem zoo commands.
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
    /// Run several config files concurrently into a directory.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ZooCommand {
    /// List problem names.
    List,
}

/// Flags shared by the run commands. Each flag overrides the config-file key
/// of the same name.
#[derive(Args, Default)]
struct RunArgs {
    /// `key = value` file with defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    lambda_fraction: Option<f64>,
    #[arg(long)]
    residue_stop: Option<f64>,
    /// Merit of the averaged iterate on affine problems (true/false).
    #[arg(long)]
    merit: Option<String>,
    /// Merit ball radius; defaults to twice the start's distance to the solution.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    cond: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    psd: Option<f64>,
    #[arg(long)]
    region: Option<f64>,
    /// Distance of the start from the solution.
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self) -> anyhow::Result<Settings> {
        let base = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::new(),
        };
        let mut cli = Settings::new();
        macro_rules! put {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cli.set(stringify!($field), v); })*
            };
        }
        put!(problem, dim, seed, p, iters, outer, h, t_max, lambda_fraction, residue_stop, merit, radius, cond, mu, psd, region, start, inner_tol);
        if let Some(out) = &self.out {
            cli.set("out", out.display());
        }
        Ok(base.overlay(&cli))
    }

    fn spec(&self, solver: SolverKind) -> anyhow::Result<ExperimentSpec> {
        let mut settings = self.settings()?;
        settings.set("solver", solver.name());
        Ok(ExperimentSpec::from_settings(&settings)?)
    }
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    column: String,
    #[arg(long)]
    k_min: Option<f64>,
    #[arg(long)]
    k_max: Option<f64>,
    /// Fail unless the slope is at most this value.
    #[arg(long, allow_hyphen_values = true)]
    max_slope: Option<f64>,
}

fn run(spec: &ExperimentSpec, print_rows: bool) -> anyhow::Result<bool> {
    let outcome = run_and_write(spec)?;
    print!("{}", outcome.summary);
    if print_rows && spec.out.is_none() {
        print!("{}", outcome.csv);
    }
    Ok(outcome.summary.passed())
}

fn rates(args: &RatesArgs) -> anyhow::Result<bool> {
    let k_max = match args.k_max {
        Some(k) => k,
        None => {
            let text = std::fs::read_to_string(&args.csv)
                .with_context(|| format!("reading {}", args.csv.display()))?;
            let (xs, _) = dexp_bench::rates::read_columns(&text, &args.column)?;
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    };
    let k_min = args.k_min.unwrap_or_else(|| default_window(k_max).0);
    let fit = fit_rate_slope(&args.csv, &args.column, k_min, k_max)?;
    println!("{fit}");
    Ok(match args.max_slope {
        Some(limit) => {
            let ok = fit.slope <= limit;
            println!("{} slope {:.4} <= {limit}", if ok { "PASS" } else { "FAIL" }, fit.slope);
            ok
        }
        None => true,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => a.spec(SolverKind::De).and_then(|s| run(&s, false)),
        Command::Restart(a) => a.spec(SolverKind::Restart).and_then(|s| run(&s, true)),
        Command::Flow(a) => a.spec(SolverKind::Flow).and_then(|s| run(&s, false)),
        Command::Certify { solver, run: a } => solver
            .parse::<SolverKind>()
            .map_err(anyhow::Error::from)
            .and_then(|k| a.spec(k))
            .and_then(|s| {
                let outcome = run_and_write(&s)?;
                print!("{}", outcome.summary.certificates);
                Ok(outcome.summary.passed())
            }),
        Command::Rates(a) => rates(a),
        Command::Zoo { command: ZooCommand::List } => {
            for kind in ProblemKind::ALL {
                println!("{:<18} {}", kind.name(), kind.summary());
            }
            Ok(true)
        }
        Command::Batch { configs, out_dir } => (|| {
            let mut specs = Vec::new();
            for path in configs {
                let settings = Settings::load(path)?;
                specs.push(ExperimentSpec::from_settings(&settings).with_context(|| path.display().to_string())?);
            }
            let entries = run_batch(&specs, out_dir)?;
            let mut ok = true;
            for e in &entries {
                match &e.result {
                    Ok(s) => {
                        ok &= s.passed();
                        print!("{s}");
                    }
                    Err(err) => {
                        ok = false;
                        println!("{} error: {err}", e.hash);
                    }
                }
            }
            if entries.is_empty() {
                bail!("no experiments");
            }
            Ok(ok)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
