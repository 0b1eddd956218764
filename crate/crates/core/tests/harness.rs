use std::fs;

use pgd_core::harness::{
    aggregate_seeds, csv_header, lookup, read_metrics, registry, resolve_file, resolve_registry, run_experiment,
    seed_dir, Manifest, RunOptions, RunStatus, TaskConfig,
};
use pgd_core::loss::LossKind;
use pgd_core::models::{init_params, Activation, InitScheme};
use pgd_core::optim::{DampingKind, OptimizerConfig, OptimizerKind, Phase, PhasePlan};

fn short_fft(iterations: u64, extra: &[&str]) -> pgd_core::harness::Resolved {
    let mut o = vec![
        format!("iterations={iterations}"),
        "log_every=1".to_string(),
        "wall_clock=false".to_string(),
        "ntk_every=5".to_string(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    resolve_registry("fig-fft-error", &o).unwrap()
}

fn opts(root: &std::path::Path, r: &pgd_core::harness::Resolved) -> RunOptions {
    let mut o = RunOptions::new(root);
    o.provenance = r.provenance.clone();
    o
}

#[test]
fn ten_logged_iterations_give_ten_rows_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let r = short_fft(10, &["points=20", "batch_size=20"]);
    let summary = run_experiment(&r.config, &opts(dir.path(), &r)).unwrap();
    assert!(summary.all_completed());
    let run_dir = seed_dir(dir.path(), "fig-fft-error", 0);
    assert_eq!(summary.runs[0].dir, run_dir);

    let table = read_metrics(&run_dir.join("metrics.csv")).unwrap();
    assert_eq!(table.header, csv_header(10));
    let recs = table.records().unwrap();
    assert_eq!(recs.len(), 10);
    assert_eq!(recs.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert!(recs.iter().all(|r| r.wall_ms.is_none() && r.train_acc.is_none() && r.mode_errors.len() == 10));
    let with_ntk: Vec<u64> = recs.iter().filter(|r| r.lambda_max.is_some()).map(|r| r.iteration).collect();
    assert_eq!(with_ntk, vec![5, 10]);
    for r in recs.iter().filter(|r| r.lambda_max.is_some()) {
        assert!(r.lambda_max.unwrap() >= r.lambda_min.unwrap());
        // GN carries no damping, so only the plain condition number is logged.
        assert!(r.kappa_lm.is_none());
    }

    let m = Manifest::read(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(m.registry_id.as_deref(), Some("fig-fft-error"));
    assert_eq!(m.seed, 0);
    assert_eq!(m.rows, 10);
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.overrides, r.provenance.overrides);
    assert_eq!(m.config, r.config);
    assert_eq!(m.recipe.unwrap().iterations, 10);
}

#[test]
fn lm_rows_carry_both_condition_numbers() {
    let dir = tempfile::tempdir().unwrap();
    // Six points keep the smallest NTK eigenvalue clear of rounding.
    let r = short_fft(5, &["optimizer=lm", "damping=0.5", "points=6", "batch_size=6", "fft_modes=3"]);
    run_experiment(&r.config, &opts(dir.path(), &r)).unwrap();
    let recs = read_metrics(&seed_dir(dir.path(), "fig-fft-error", 0).join("metrics.csv"))
        .unwrap()
        .records()
        .unwrap();
    let last = recs.last().unwrap();
    let (lmax, lmin) = (last.lambda_max.unwrap(), last.lambda_min.unwrap());
    let expected = (lmax / lmin) * (lmin + 0.5) / (lmax + 0.5);
    assert!((last.kappa_lm.unwrap() - expected).abs() <= 1e-9 * expected);
    assert!(last.kappa_lm.unwrap() <= last.kappa_gd.unwrap());
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let r = short_fft(12, &["optimizer=sgd", "batch_size=25"]);
    for d in [&a, &b] {
        run_experiment(&r.config, &opts(d.path(), &r)).unwrap();
    }
    for f in ["metrics.csv", "manifest.json"] {
        let x = fs::read(seed_dir(a.path(), "fig-fft-error", 0).join(f)).unwrap();
        let y = fs::read(seed_dir(b.path(), "fig-fft-error", 0).join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn seeds_run_concurrently_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let r = short_fft(6, &["seeds=[3, 1, 2]"]);
    let mut o = opts(dir.path(), &r);
    o.parallel_seeds = 2;
    let summary = run_experiment(&r.config, &o).unwrap();
    assert_eq!(summary.runs.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 1, 2]);
    let agg = aggregate_seeds(&summary.runs.iter().map(|s| s.dir.clone()).collect::<Vec<_>>()).unwrap();
    assert_eq!(agg.runs, 3);
    assert_eq!(agg.iterations, (1..=6).collect::<Vec<_>>());
    let col = agg.metrics.iter().position(|m| m == "train_loss").unwrap();
    for row in 0..6 {
        let (lo, mid, hi) = (agg.min[row][col].unwrap(), agg.median[row][col].unwrap(), agg.max[row][col].unwrap());
        assert!(lo <= mid && mid <= hi);
    }
    // The seeds differ, so the band has width.
    assert!(agg.max[0][col].unwrap() > agg.min[0][col].unwrap());
}

#[test]
fn phase_boundaries_show_in_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = short_fft(1, &[]);
    r.config.phases = PhasePlan::new(vec![
        Phase {
            optimizer: OptimizerConfig::gn(1e-2, 1e-8),
            iterations: 4,
        },
        Phase {
            optimizer: OptimizerConfig::adam(1e-3),
            iterations: 3,
        },
    ])
    .unwrap();
    run_experiment(&r.config, &opts(dir.path(), &r)).unwrap();
    let run_dir = seed_dir(dir.path(), "fig-fft-error", 0);
    let recs = read_metrics(&run_dir.join("metrics.csv")).unwrap().records().unwrap();
    let phases: Vec<usize> = recs.iter().map(|r| r.phase).collect();
    assert_eq!(phases, vec![0, 0, 0, 0, 1, 1, 1]);
    let m = Manifest::read(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(m.phase_boundaries, vec![4]);
}

#[test]
fn divergence_ends_with_a_failure_row() {
    let dir = tempfile::tempdir().unwrap();
    let r = resolve_registry(
        "fig-grokking-modulo",
        &["iterations=20".into(), "learning_rate=1e12".into(), "log_every=1".into()],
    )
    .unwrap();
    let summary = run_experiment(&r.config, &opts(dir.path(), &r)).unwrap();
    let RunStatus::Failed { iteration, .. } = summary.runs[0].status.clone() else {
        panic!("expected a failed run, got {:?}", summary.runs[0].status);
    };
    let recs = read_metrics(&summary.metrics_paths()[0]).unwrap().records().unwrap();
    let last = recs.last().unwrap();
    assert_eq!(last.iteration, iteration);
    assert!(last.train_loss.is_nan());
    assert!(recs[..recs.len() - 1].iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn config_files_round_trip_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let base = lookup("fig-grokking-modulo").unwrap().default_config().unwrap();
    let path = dir.path().join("modulo.toml");
    fs::write(&path, base.to_toml().unwrap()).unwrap();
    let r = resolve_file(&path, &["train_fraction=0.5".into(), "phases.0.iterations=7".into()]).unwrap();
    assert!(r.provenance.registry_id.is_none());
    let TaskConfig::ModularAddition { train_fraction, .. } = r.config.task else {
        panic!("task kind changed");
    };
    assert_eq!(train_fraction, 0.5);
    assert_eq!(r.config.phases.total_iterations(), 7);
    assert!(resolve_file(&path, &["train_fraction=2".into()]).unwrap_err().is_usage());
    fs::write(&path, "id = 3").unwrap();
    assert!(resolve_file(&path, &[]).unwrap_err().is_usage());
}

#[test]
fn regression_entries_follow_the_setup_table() {
    for id in ["fig-fft-error", "fig-fft-error-2d"] {
        for (opt, kind) in [("sgd", OptimizerKind::Sgd), ("gn", OptimizerKind::Gn), ("lm", OptimizerKind::Lm)] {
            let c = resolve_registry(id, &[format!("optimizer={opt}")]).unwrap().config;
            assert_eq!(c.model.widths.len(), 3, "{id}: two affine layers");
            assert_eq!(c.model.widths[1], 80);
            assert_eq!(*c.model.widths.last().unwrap(), 1);
            assert_eq!(c.model.activation, Activation::Tanh);
            assert_eq!(c.model.init_scheme, InitScheme::KaimingUniform);
            let p = init_params(&c.model, 0, 1.0).unwrap();
            assert!(p.bias(0).iter().chain(p.bias(1).iter()).all(|b| *b == 0.0));
            assert_eq!(c.loss, LossKind::Mse);
            let p = &c.phases.phases()[0].optimizer;
            assert_eq!(p.kind, kind);
            assert_eq!(p.learning_rate, 1e-2);
        }
    }
    let one = lookup("fig-fft-error").unwrap().default_config().unwrap();
    assert_eq!(one.batch_size, Some(100));
    assert_eq!(one.train_rows(), 100);
    let two = lookup("fig-fft-error-2d").unwrap().default_config().unwrap();
    assert_eq!(two.batch_size, Some(400));
    assert_eq!(two.train_rows(), 1600);
}

#[test]
fn modular_entry_follows_the_setup_table() {
    for (s, mu) in [(0.5, 0.07), (1.0, 0.0125), (1.5, 0.005), (2.0, 0.0025)] {
        let lm = resolve_registry("fig-grokking-modulo", &[format!("scale={s}"), "optimizer=lm".into()])
            .unwrap()
            .config;
        assert_eq!(lm.model.widths, vec![46, 100, 23]);
        assert_eq!(lm.model.activation, Activation::Quadratic);
        assert_eq!(lm.model.output_scale, s * s);
        assert_eq!(lm.model.output_divisor, 4600.0);
        assert!(lm.model.mirrored_init);
        assert_eq!(lm.batch_size, None);
        assert_eq!(lm.phases.total_iterations(), 1000);
        let d = lm.phases.phases()[0].optimizer.damping;
        assert_eq!((d.kind, d.start), (DampingKind::Constant, mu));
        let TaskConfig::ModularAddition {
            modulus,
            train_fraction,
            ..
        } = lm.task
        else {
            panic!()
        };
        assert_eq!((modulus, train_fraction), (23, 0.9));

        let sgd = resolve_registry("fig-grokking-modulo", &[format!("scale={s}")]).unwrap().config;
        let lr = sgd.phases.phases()[0].optimizer.learning_rate;
        let at_unit = resolve_registry("fig-grokking-modulo", &["scale=1".to_string()])
            .unwrap()
            .config
            .phases
            .phases()[0]
            .optimizer
            .learning_rate;
        assert!((lr * s * s - at_unit).abs() < 1e-9 * at_unit, "lr must scale as 1/s^2");
    }
}

#[test]
fn polynomial_entry_follows_the_setup_table() {
    let c = resolve_registry("fig-grokking-poly", &["scale=4".into(), "optimizer=lm".into()]).unwrap().config;
    assert_eq!(c.model.widths, vec![100, 500, 1]);
    assert_eq!(c.model.output_scale, 4.0);
    assert_eq!(c.phases.total_iterations(), 60_000);
    assert_eq!(c.phases.phases()[0].optimizer.damping.start, 0.1 / 4.0);
    let TaskConfig::PolynomialRegression {
        dim,
        train_points,
        test_points,
        epsilon,
        ..
    } = c.task
    else {
        panic!()
    };
    assert_eq!((dim, train_points, test_points, epsilon), (100, 450, 1000, 0.25));
}

#[test]
fn mnist_entries_follow_the_setup_tables() {
    let lr = |id: &str, opt: &str| {
        resolve_registry(id, &[format!("optimizer={opt}")]).unwrap().config.phases.phases()[0]
            .optimizer
            .clone()
    };
    let w = lookup("fig-mnist-weight").unwrap().default_config().unwrap();
    assert_eq!(w.model.widths, vec![784, 250, 10]);
    assert_eq!(w.model.activation, Activation::Relu);
    assert_eq!(w.model.init_scheme, InitScheme::GlorotUniform);
    assert_eq!((w.batch_size, w.train_rows(), w.init_scale), (Some(200), 1000, 8.0));
    assert_eq!(lr("fig-mnist-weight", "sgd").learning_rate, 1e-4);
    assert_eq!(lr("fig-mnist-weight", "adam").learning_rate, 1e-3);
    let adamw = lr("fig-mnist-weight", "adamw");
    assert_eq!((adamw.learning_rate, adamw.weight_decay), (1e-3, 0.1));
    let lm = lr("fig-mnist-weight", "lm").damping;
    assert_eq!((lm.kind, lm.start, lm.end, lm.decay_iters), (DampingKind::LogInterp, 1e-2, 1e-4, 500));

    let x = lookup("fig-mnist-xentropy").unwrap().default_config().unwrap();
    assert_eq!(x.model.widths, vec![784, 200, 200, 10]);
    assert_eq!((x.loss, x.init_scale, x.batch_size, x.train_rows()), (LossKind::CrossEntropy, 100.0, Some(200), 200));
    let ggn = lr("fig-mnist-xentropy", "ggn");
    assert_eq!((ggn.learning_rate, ggn.damping.start), (1e-2, 1.0));
    assert_eq!(lr("fig-mnist-xentropy", "sgd").learning_rate, 1e-3);

    let c = lookup("fig-mnist-continue").unwrap().default_config().unwrap();
    assert_eq!(c.phases.boundaries(), vec![2000]);
    assert_eq!(c.phases.total_iterations(), 22_000);
    assert_eq!(c.phases.phases()[1].optimizer.kind, OptimizerKind::Adamw);
}

#[test]
fn every_entry_has_a_description() {
    assert_eq!(registry().len(), 7);
    assert!(registry().iter().all(|e| !e.description.is_empty()));
}
