use iocrelax::demos::{
    generate_demoset, generate_from_optimum, load_demoset, make_noise_spec, mean_trajectory, save_demoset, NoiseSpec,
};
use iocrelax::systems::{make_system, SystemParams};
use iocrelax::{solve_ocp, OcpSpec, Theta, Trajectory};
use nalgebra::DMatrix;

fn msd() -> (OcpSpec, Theta, Trajectory) {
    let spec = make_system("msd", &SystemParams::default()).unwrap();
    let theta = spec.theta_star.clone().unwrap();
    let opt = solve_ocp(&spec, &theta, None).unwrap().traj;
    (spec, theta, opt)
}

/// Noise realizations `t_{k,d} - t*_k` for stage `k`, one column per demo.
fn residuals(demos: &[Trajectory], opt: &Trajectory, k: usize) -> DMatrix<f64> {
    let w = opt.n + opt.m;
    DMatrix::from_fn(w, demos.len(), |i, d| demos[d].stage(k)[i] - opt.stage(k)[i])
}

#[test]
fn stage_covariance_matches_configuration() {
    let (spec, theta, opt) = msd();
    let cov = DMatrix::from_row_slice(3, 3, &[0.04, 0.01, 0.0, 0.01, 0.09, -0.02, 0.0, -0.02, 0.16]);
    let noise = NoiseSpec::new(cov.clone(), DMatrix::identity(2, 2) * 0.01, 17).unwrap();
    let d = 20_000;
    let ds = generate_from_optimum(&spec, &theta, &opt, &noise, d).unwrap();
    for k in [0, 4, 9] {
        let r = residuals(&ds.demos, &opt, k);
        let sample = &r * r.transpose() / d as f64;
        let dev = (&sample - &cov).amax();
        assert!(dev <= 0.05 * cov.amax(), "stage {k}: {sample} vs {cov}");
    }
    let xn = DMatrix::from_fn(2, d, |i, j| ds.demos[j].state(10)[i] - opt.state(10)[i]);
    let sample = &xn * xn.transpose() / d as f64;
    assert!((&sample - DMatrix::identity(2, 2) * 0.01).amax() <= 0.05 * 0.01);
}

#[test]
fn stages_are_uncorrelated_and_mean_converges() {
    let (spec, theta, opt) = msd();
    let noise = make_noise_spec(&spec, &opt.u, 0.1).unwrap().with_seed(5);
    let d = 20_000;
    let ds = generate_from_optimum(&spec, &theta, &opt, &noise, d).unwrap();
    let std = noise.sigma_t[(2, 2)].sqrt();
    let a = residuals(&ds.demos, &opt, 3).row(2).into_owned();
    let b = residuals(&ds.demos, &opt, 4).row(2).into_owned();
    let corr = a.dot(&b) / (a.norm() * b.norm());
    assert!(corr.abs() < 0.02, "cross-stage correlation {corr}");
    let mean = mean_trajectory(&ds).unwrap();
    for k in 0..spec.horizon {
        assert!((mean.input(k)[0] - opt.input(k)[0]).abs() < 5.0 * std / (d as f64).sqrt());
        // input-only noise leaves states untouched, up to summation roundoff
        for (a, b) in mean.state(k).iter().zip(opt.state(k)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        assert!(ds.demos.iter().all(|dm| dm.state(k) == opt.state(k)));
    }
}

#[test]
fn input_noise_rule() {
    let (spec, _, opt) = msd();
    let pct = 0.05;
    let noise = make_noise_spec(&spec, &opt.u, pct).unwrap();
    let mean_u = opt.u.mean();
    assert!((noise.sigma_t[(2, 2)].sqrt() - pct * mean_u.abs()).abs() < 1e-15);
    assert_eq!(noise.sigma_t[(0, 0)], 0.0);
    assert_eq!(noise.pct, Some(pct));
    assert!(make_noise_spec(&spec, &opt.u, -0.1).is_err());
}

#[test]
fn seeds_determine_draws() {
    let (spec, theta, _) = msd();
    let base = make_noise_spec(&spec, &solve_ocp(&spec, &theta, None).unwrap().traj.u, 0.1).unwrap();
    let a = generate_demoset(&spec, &theta, &base.clone().with_seed(1), 5).unwrap();
    let b = generate_demoset(&spec, &theta, &base.clone().with_seed(1), 5).unwrap();
    let c = generate_demoset(&spec, &theta, &base.with_seed(2), 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.demos, c.demos);
}

#[test]
fn zero_noise_repeats_the_optimum() {
    let (spec, theta, opt) = msd();
    let ds = generate_from_optimum(&spec, &theta, &opt, &NoiseSpec::zero(2, 1), 3).unwrap();
    assert!(ds.demos.iter().all(|d| d == &opt));
}

#[test]
fn file_round_trip_preserves_everything() {
    let spec = make_system("bicycle", &SystemParams::default()).unwrap();
    let theta = spec.theta_star.clone().unwrap();
    let opt = solve_ocp(&spec, &theta, None).unwrap().traj;
    let noise = make_noise_spec(&spec, &opt.u, 0.05).unwrap().with_seed(9);
    let ds = generate_from_optimum(&spec, &theta, &opt, &noise, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.tsv");
    save_demoset(&ds, &path).unwrap();
    assert_eq!(load_demoset(&path).unwrap(), ds);
}
