use iocrelax::fdcheck::{check_model_derivatives, finite_difference_check};
use iocrelax::jacobians::{dynamics_jacobian, dynamics_residuals};
use iocrelax::systems::{make_system, SystemParams, SYSTEM_NAMES};
use iocrelax::{solve_ocp, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TOL: f64 = 1e-5;

fn perturbed(center: &Trajectory, rng: &mut ChaCha8Rng, scale: f64) -> Trajectory {
    let z = center.to_z().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
    Trajectory::from_z(center.n, center.m, center.horizon, &z).unwrap()
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    for (i, name) in SYSTEM_NAMES.iter().enumerate() {
        let spec = make_system(name, &SystemParams::default()).unwrap();
        let theta = spec.theta_star.clone().unwrap();
        let center = solve_ocp(&spec, &theta, None).unwrap().traj;
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        for t in 0..20 {
            let traj = perturbed(&center, &mut rng, 0.2);
            let w: Vec<f64> = (0..spec.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
            for (what, rep) in check_model_derivatives(&spec, &traj, theta.as_slice(), &w, TOL).unwrap() {
                assert!(
                    rep.passed,
                    "{name} trajectory {t}: {what} deviates by {:e} at {:?}",
                    rep.max_rel_dev, rep.worst
                );
            }
        }
    }
}

#[test]
fn corrupted_dynamics_jacobian_is_caught() {
    let spec = make_system("bicycle", &SystemParams::default()).unwrap();
    let theta = spec.theta_star.clone().unwrap();
    let traj = solve_ocp(&spec, &theta, None).unwrap().traj;
    let mut jac = dynamics_jacobian(&spec, &traj).unwrap().transpose();
    // d r_{stage 2, heading} / d u1 at stage 2
    let col = spec.input_index(2, 0);
    jac[(2 * spec.n() + 2, col)] *= 1.01;
    let f = |z: &DVector<f64>| {
        let t = Trajectory::from_z(spec.n(), spec.m(), spec.horizon, z).unwrap();
        dynamics_residuals(&spec, &t).unwrap()
    };
    let rep = finite_difference_check(f, &traj.to_z(), &jac, TOL).unwrap();
    assert!(!rep.passed);
    assert_eq!(rep.worst, (2 * spec.n() + 2, col));
}
