use super::*;
use crate::solver::StepSpec;

fn toy_sweep(ratios: Vec<f64>, successes: Vec<usize>, trials: usize) -> SweepResult {
    SweepResult {
        d: 4,
        ms: ratios.iter().map(|r| (r * 4.0) as usize).collect(),
        ratios,
        trials_per_ratio: trials,
        successes,
        step_policy: "auto".into(),
        base_seed: 1,
        bias_lambda: 5.0,
        sigma: 0.0,
        max_iters: 10,
        measurement_convention: "unit-modulus".into(),
        failures: Vec::new(),
    }
}

fn small_spec(jobs: usize) -> SweepSpec {
    SweepSpec {
        d: 6,
        ratios: vec![2.0, 6.0],
        trials: 4,
        bias_lambda: 5.0,
        sigma: 0.0,
        base_seed: 11,
        jobs,
    }
}

#[test]
fn sweep_csv_rows() {
    let r = toy_sweep(vec![3.0, 8.0], vec![0, 50], 50);
    let text = csv_string(&r);
    assert_eq!(
        text,
        "ratio,trials,successes,success_rate\n3.0,50,0,0.0\n8.0,50,50,1.0\n"
    );
    let rows = parse_sweep_csv(&text).unwrap();
    assert_eq!(rows.len(), 2);
    for (row, i) in rows.iter().zip(0..) {
        assert_eq!(row.ratio, r.ratios[i]);
        assert_eq!(row.trials, r.trials_per_ratio);
        assert_eq!(row.successes, r.successes[i]);
        assert_eq!(row.success_rate, r.success_rates()[i]);
    }
}

#[test]
fn empty_sweep_is_header_only() {
    let r = toy_sweep(vec![], vec![], 5);
    assert_eq!(csv_string(&r), "ratio,trials,successes,success_rate\n");
    let svg = r.render_svg();
    assert!(svg.contains("no data"));
    assert!(svg.contains("class=\"axis\""));
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn sweep_svg_has_one_point_per_ratio() {
    let r = toy_sweep(vec![3.0, 4.0, 5.0], vec![1, 3, 5], 5);
    let svg = r.render_svg();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(plot::polyline_points(&svg).unwrap().len(), 3);
    assert!(svg.contains("m / d") && svg.contains("success rate"));
}

#[test]
fn convergence_svg_is_monotone() {
    let result = ConvergenceResult {
        d: 2,
        m: 8,
        sigma: 0.0,
        bias_lambda: 5.0,
        seed: 0,
        step_policy: "auto".into(),
        mu_used: 0.1,
        iters: (0..20).collect(),
        rel_errors: (0..20).map(|k| 0.7f64.powi(k)).collect(),
        losses: vec![0.0; 20],
        iters_run: 19,
        final_rel_error: 0.7f64.powi(19),
        fitted_rate: None,
        fit_r_squared: None,
        plateau: None,
        diverged_at: None,
    };
    let pts = plot::polyline_points(&result.render_svg()).unwrap();
    assert_eq!(pts.len(), 20);
    // decreasing error → increasing SVG y
    for w in pts.windows(2) {
        assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
    }
    let rows = parse_convergence_csv(&csv_string(&result)).unwrap();
    let (iters, errs): (Vec<usize>, Vec<f64>) = rows.into_iter().unzip();
    assert_eq!(iters, result.iters);
    assert_eq!(errs, result.rel_errors);
}

#[test]
fn single_trial_counts_are_binary() {
    let spec = SweepSpec {
        trials: 1,
        ..small_spec(1)
    };
    let cfg = SolverConfig {
        max_iters: 200,
        ..SolverConfig::default()
    };
    let r = run_success_sweep(&spec, &cfg).unwrap();
    assert!(r.successes.iter().all(|s| *s <= 1));
    assert_eq!(r.failures.len(), r.ratios.len() - r.successes.iter().sum::<usize>());
}

#[test]
fn sweep_output_ignores_thread_count() {
    let cfg = SolverConfig {
        max_iters: 400,
        ..SolverConfig::default()
    };
    let a = run_success_sweep(&small_spec(1), &cfg).unwrap();
    let b = run_success_sweep(&small_spec(3), &cfg).unwrap();
    assert_eq!(csv_string(&a), csv_string(&b));
    assert_eq!(a, b);
}

#[test]
fn failing_trials_are_replayable() {
    let cfg = SolverConfig {
        max_iters: 5,
        ..SolverConfig::default()
    };
    let r = run_success_sweep(&small_spec(1), &cfg).unwrap();
    assert!(!r.failures.is_empty());
    let f = &r.failures[0];
    let i = r.ratios.iter().position(|x| *x == f.ratio).unwrap();
    assert_eq!(f.seed, trial_seed(r.base_seed, i, f.trial));
}

#[test]
fn sweep_rejects_bad_input() {
    let cfg = SolverConfig::default();
    let empty = SweepSpec {
        ratios: vec![],
        ..small_spec(1)
    };
    assert!(run_success_sweep(&empty, &cfg).is_err());
    let zero = SweepSpec {
        trials: 0,
        ..small_spec(1)
    };
    assert!(run_success_sweep(&zero, &cfg).is_err());
    let bad_step = SolverConfig {
        step: StepSpec::fixed(-1.0),
        ..SolverConfig::default()
    };
    assert!(matches!(
        run_success_sweep(&small_spec(1), &bad_step),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn divergent_trials_are_failures() {
    let cfg = SolverConfig {
        step: StepSpec::fixed(1.0),
        max_iters: 100,
        ..SolverConfig::default()
    };
    let r = run_success_sweep(&small_spec(1), &cfg).unwrap();
    assert_eq!(r.successes, vec![0, 0]);
    assert!(r.failures.iter().all(|f| f.diverged));
}

#[test]
fn convergence_from_truth_has_no_rate() {
    let spec = ConvergenceSpec {
        d: 4,
        m: 28,
        sigma: 0.0,
        bias_lambda: 5.0,
        seed: 3,
    };
    let inst = generate_instance(&InstanceParams::new(4, 28, 5.0, 0.0, 3)).unwrap();
    let cfg = SolverConfig {
        init: InitMode::UserSupplied { z0: inst.x.clone() },
        ..SolverConfig::default()
    };
    let r = run_convergence_experiment(&spec, &cfg).unwrap();
    assert_eq!(r.iters_run, 0);
    assert!(r.fitted_rate.is_none());
}

#[test]
fn tail_median_of_last_tenth() {
    let v: Vec<f64> = (0..100).map(f64::from).collect();
    assert_eq!(tail_median(&v), Some(94.5));
    assert_eq!(tail_median(&[3.0]), Some(3.0));
    assert_eq!(tail_median(&[]), None);
}

#[test]
fn io_errors_carry_the_path() {
    let r = toy_sweep(vec![3.0], vec![1], 1);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let bad = blocker.join("out.csv");
    match emit_csv(&r, &bad) {
        Err(Error::Io { path, .. }) => assert!(path.starts_with(&blocker)),
        other => panic!("{other:?}"),
    }
    let good = dir.path().join("nested/out.svg");
    emit_plot(&r, &good).unwrap();
    assert!(std::fs::read_to_string(good).unwrap().contains("<polyline"));
}
