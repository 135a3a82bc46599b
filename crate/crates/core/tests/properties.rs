use nalgebra::DVector;
use proptest::prelude::*;

use dexp_core::de::{certify_run, names, run_de, running_infimum, SolverConfig};
use dexp_core::flow::{run_flow, FlowConfig};
use dexp_core::merit::{merit_affine_exact, merit_sampled, MeritSpec};
use dexp_core::restart::{basin_radius, local_rate_constant, run_restart, RestartConfig};
use dexp_core::taylor::{eval_model, solve_p2_secular, TaylorModel, DEFAULT_TOL_R};
use dexp_core::zoo::{make_problem, ProblemDescriptor};
use dexp_core::{linalg, Point};

fn point(coords: Vec<f64>) -> Point {
    Point::new(coords).unwrap()
}

fn affine(dim: usize, seed: u64, order: usize) -> dexp_core::Problem {
    make_problem(&ProblemDescriptor::random_affine_monotone(dim, 1.0, seed), order).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn secular_zero_solves_the_model(
        dim in 1usize..8,
        seed in 0u64..1000,
        scale in 0.01f64..10.0,
        lipschitz in 0.1f64..10.0,
    ) {
        let problem = affine(dim, seed, 2);
        let center = point((0..dim).map(|i| scale * ((i as f64 + seed as f64).sin())).collect());
        let model = TaylorModel::with_constants(&problem, &center, 2, lipschitz).unwrap();
        let sol = solve_p2_secular(&model, DEFAULT_TOL_R).unwrap();
        let fv = model.value_at_center().norm();
        let direct = eval_model(&model, &sol.x).unwrap().norm();
        prop_assert!(direct <= 1e-10 * (1.0 + fv), "model residual {direct:e}, |F(v)| {fv:e}");
        prop_assert!((sol.step_norm - (sol.x.as_vector() - center.as_vector()).norm()).abs() <= 1e-12 * (1.0 + sol.step_norm));
    }

    #[test]
    fn model_is_monotone(
        dim in 1usize..6,
        seed in 0u64..1000,
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let problem = make_problem(&ProblemDescriptor::CubicGrad { dim, radius: 4.0 }, 2).unwrap();
        let center = point(vec![0.3 + seed as f64 * 1e-3; dim]);
        let model = TaylorModel::new(&problem, &center).unwrap();
        let x = point(a[..dim].to_vec());
        let y = point(b[..dim].to_vec());
        let fx = eval_model(&model, &x).unwrap();
        let fy = eval_model(&model, &y).unwrap();
        let inner = (fx.as_vector() - fy.as_vector()).dot(&(x.as_vector() - y.as_vector()));
        prop_assert!(inner >= -1e-12 * (1.0 + fx.norm() + fy.norm()));
    }

    #[test]
    fn dual_state_accumulates_scaled_operator_values(
        dim in 1usize..6,
        seed in 0u64..1000,
        order in 1usize..3,
    ) {
        let problem = affine(dim, seed, order);
        let x0 = Point::zeros(dim);
        let cfg = SolverConfig::for_problem(&problem, 40);
        let run = run_de(&cfg, &problem, &x0).unwrap();
        let mut s = DVector::zeros(dim);
        let mut cum = 0.0;
        let lo = SolverConfig::lower_fraction(order);
        let hi = SolverConfig::upper_fraction(order);
        for r in &run.records {
            prop_assert!((r.v.as_vector() - (x0.as_vector() + &s)).norm() <= 1e-12 * (1.0 + s.norm()));
            s -= &r.fx * r.lambda;
            cum += r.lambda;
            prop_assert!((&r.s - &s).norm() <= 1e-12 * (1.0 + s.norm()));
            prop_assert!((r.cum_lambda - cum).abs() <= 1e-12 * cum);
            prop_assert!((r.lyapunov - 0.5 * s.norm_squared()).abs() <= 1e-12 * (1.0 + r.lyapunov));
            let b = cfg.bracket_value(r.lambda, r.step_norm);
            prop_assert!(b >= lo * (1.0 - 1e-12) && b <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn certificates_hold_on_random_affine_runs(
        dim in 1usize..7,
        seed in 0u64..1000,
        order in 1usize..3,
        fraction in 0.0f64..1.0,
    ) {
        let problem = affine(dim, seed, order);
        let x0 = Point::zeros(dim);
        let lo = SolverConfig::lower_fraction(order);
        let hi = SolverConfig::upper_fraction(order);
        let cfg = SolverConfig::for_problem(&problem, 200).with_lambda_fraction(lo + fraction * (hi - lo));
        let run = run_de(&cfg, &problem, &x0).unwrap();
        let report = certify_run(&run, &cfg, &problem, &x0).unwrap();
        prop_assert!(report.all_passed(), "{report}");
        prop_assert!(report.get(names::STEP_SUM).is_some());
    }

    #[test]
    fn running_infimum_is_nonincreasing_lower_envelope(dim in 1usize..6, seed in 0u64..1000) {
        let problem = affine(dim, seed, 1);
        let run = run_de(&SolverConfig::for_problem(&problem, 60), &problem, &Point::zeros(dim)).unwrap();
        let inf = running_infimum(&run.records);
        for (i, r) in run.records.iter().enumerate() {
            prop_assert!(inf[i] <= r.residue);
            if i > 0 {
                prop_assert!(inf[i] <= inf[i - 1]);
            }
            prop_assert!(run.records[..=i].iter().any(|q| q.residue == inf[i]));
        }
    }

    #[test]
    fn merit_is_nonnegative_and_matches_sampling(
        dim in 1usize..5,
        seed in 0u64..1000,
        offset in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let problem = affine(dim, seed, 1);
        let spec = MeritSpec::with_default_radius(&problem, Point::zeros(dim)).unwrap();
        let x = point(offset[..dim].to_vec());
        let exact = merit_affine_exact(&spec, &x, 1e-12).unwrap();
        prop_assert!(exact >= 0.0);
        let sampled = merit_sampled(&spec, &x, 16, seed).unwrap();
        // sampling only sees feasible points, so it can never exceed the maximum
        prop_assert!(sampled <= exact + 1e-9 * (1.0 + exact));
        let at_solution = merit_affine_exact(&spec, problem.solution().unwrap(), 1e-12).unwrap();
        prop_assert!(at_solution <= 1e-9);
    }

    #[test]
    fn restart_meets_local_rate_in_basin(frac in 0.05f64..0.95, sign in prop::bool::ANY) {
        let radius = 1.0 / 6.0;
        let problem = make_problem(&ProblemDescriptor::StrongMonoCubic { dim: 1, mu: 1.0, radius }, 2).unwrap();
        let kappa = problem.lipschitz();
        let basin = basin_radius(2, kappa).unwrap();
        let x0 = point(vec![if sign { frac * basin } else { -frac * basin }]);
        let cfg = RestartConfig::new(2, problem.lipschitz(), 1.0, 6);
        let trace = run_restart(&cfg, &problem, &x0).unwrap();
        let c = local_rate_constant(2, kappa);
        for w in trace.errors.windows(2) {
            if w[0] >= 1e-13 {
                prop_assert!(w[1] <= c * w[0] * w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn flow_residue_is_nonincreasing(seed in 0u64..1000, order in 1usize..3) {
        let problem = make_problem(&ProblemDescriptor::random_bilinear(4, 10.0, seed).unwrap(), order).unwrap();
        let x0 = Point::zeros(4);
        let run = run_flow(&FlowConfig::new(order, 1e-2, 2.0), &problem, &x0).unwrap();
        let res0 = run.records[0].residue;
        for w in run.records.windows(2) {
            prop_assert!(w[1].residue <= w[0].residue + 1e-8 * res0);
        }
    }
}

#[test]
fn uniform_vector_is_seed_deterministic() {
    use rand::SeedableRng;
    let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    assert_eq!(linalg::uniform_vector(&mut a, 5), linalg::uniform_vector(&mut b, 5));
}
