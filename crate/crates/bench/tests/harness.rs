use iocrelax::estimators::Method;
use iocrelax_bench::{run_benchmark, run_robustness, ExperimentConfig, Robustness};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        systems: vec!["msd".into(), "bicycle".into()],
        pcts: vec![0.05],
        repetitions: 2,
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_width_robustness_matches_benchmark() {
    let cfg = ExperimentConfig {
        robustness: Some(Robustness {
            parameter: "car_length".into(),
            half_width: 0.0,
        }),
        ..small()
    };
    let robust = run_robustness(&cfg).unwrap();
    let bench = run_benchmark(&cfg).unwrap();
    assert_eq!(robust.kind, "robustness");
    assert_eq!(robust.rows, bench.rows);
}

#[test]
fn repetition_r_uses_seed_plus_r() {
    let both = run_benchmark(&small()).unwrap();
    let single = |seed| {
        run_benchmark(&ExperimentConfig {
            seed,
            repetitions: 1,
            ..small()
        })
        .unwrap()
    };
    let (a, b) = (single(7), single(8));
    for row in &both.rows {
        let ra = a.cell(&row.system, &row.method, row.pct).unwrap().mean_rmse;
        let rb = b.cell(&row.system, &row.method, row.pct).unwrap().mean_rmse;
        assert!((row.mean_rmse - 0.5 * (ra + rb)).abs() <= 1e-12 * (1.0 + row.mean_rmse));
        let std = (ra - rb).abs() / 2f64.sqrt();
        assert!((row.std_rmse - std).abs() <= 1e-12 * (1.0 + std));
    }
}

#[test]
fn rows_follow_system_method_pct_order() {
    let cfg = ExperimentConfig {
        pcts: vec![0.1, 0.05],
        estimators: vec![Method::Ep, Method::Kkt],
        repetitions: 1,
        ..small()
    };
    let t = run_benchmark(&cfg).unwrap();
    let keys: Vec<(String, String, f64)> = t
        .rows
        .iter()
        .map(|r| (r.system.clone(), r.method.clone(), r.pct))
        .collect();
    let mut expected = Vec::new();
    for s in ["msd", "bicycle"] {
        for m in ["EP", "KKT"] {
            for p in [0.1, 0.05] {
                expected.push((s.to_string(), m.to_string(), p));
            }
        }
    }
    assert_eq!(keys, expected);
}

#[test]
fn perturbed_model_changes_estimates() {
    let cfg = ExperimentConfig {
        robustness: Some(Robustness {
            parameter: "car_length".into(),
            half_width: 0.05,
        }),
        systems: vec!["bicycle".into()],
        pcts: vec![0.0001],
        ..small()
    };
    let robust = run_robustness(&cfg).unwrap();
    let bench = run_benchmark(&cfg).unwrap();
    let ep = |t: &iocrelax_bench::ResultTable| t.cell("bicycle", "EP", 0.0001).unwrap().mean_rmse;
    assert!(ep(&robust) > ep(&bench) + 1e-3);
}
