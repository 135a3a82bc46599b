use proptest::prelude::*;

use dexp_bench::csvout::{fmt_f64, render_csv, DeRow};
use dexp_bench::rates::{fit_power_law, read_columns};
use dexp_bench::{ExperimentSpec, Settings};

proptest! {
    #[test]
    fn floats_round_trip_through_csv(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn de_rows_read_back_exactly(
        values in prop::collection::vec((1e-300f64..1e300, prop::option::of(0.0f64..1e3)), 1..40),
    ) {
        let rows: Vec<DeRow> = values
            .iter()
            .enumerate()
            .map(|(i, (r, m))| DeRow {
                k: i + 1,
                lambda: *r,
                residue: r * 0.5,
                inf_residue: r * 0.25,
                step_norm: *r,
                lyapunov: *r,
                cum_lambda: *r,
                merit_ergodic: *m,
            })
            .collect();
        let text = render_csv(&rows);
        let (ks, residues) = read_columns(&text, "residue").unwrap();
        prop_assert_eq!(residues.len(), rows.len());
        for ((k, r), row) in ks.iter().zip(&residues).zip(&rows) {
            prop_assert_eq!(*k, row.k as f64);
            prop_assert_eq!(*r, row.residue);
        }
        let (_, merits) = read_columns(&text, "merit_ergodic").unwrap();
        let expected: Vec<f64> = rows.iter().filter_map(|r| r.merit_ergodic).collect();
        prop_assert_eq!(merits, expected);
    }

    #[test]
    fn power_law_slope_is_recovered(slope in -3.0f64..0.0, scale in 1e-6f64..1e6) {
        let xs: Vec<f64> = (1..=500).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| scale * x.powf(slope)).collect();
        let fit = fit_power_law("y", &xs, &ys, 10.0, 500.0).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-9);
        prop_assert!(fit.r2 >= 1.0 - 1e-9);
    }

    #[test]
    fn spec_hash_ignores_layout_and_key_order(
        dim in 1usize..50,
        seed in 0u64..10_000,
        p in 1usize..4,
        reversed in prop::bool::ANY,
    ) {
        let mut lines = [
            "problem = affine".to_string(),
            format!("dim = {dim}"),
            format!("seed = {seed}"),
            format!("p = {p}"),
        ];
        let a = ExperimentSpec::from_settings(&Settings::parse(&lines.join("\n")).unwrap()).unwrap();
        if reversed {
            lines.reverse();
        }
        let spaced: Vec<String> = lines.iter().map(|l| format!("  {}  # note", l.replace(" = ", "="))).collect();
        let b = ExperimentSpec::from_settings(&Settings::parse(&spaced.join("\n\n")).unwrap()).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn spec_hash_separates_seeds(seed in 0u64..10_000) {
        let make = |s: u64| ExperimentSpec::from_settings(&Settings::parse(&format!("seed = {s}")).unwrap()).unwrap();
        prop_assert_ne!(make(seed).hash(), make(seed + 1).hash());
    }
}
