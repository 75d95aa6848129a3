//! Benchmark problems: mass-spring-damper, pendulum and kinematic bicycle,
//! each discretized with backward Euler.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BackwardEuler, ContinuousDynamics, OcpSpec, Polytope, QuadraticFeatures, Theta};

pub const SYSTEM_NAMES: [&str; 3] = ["msd", "pendulum", "bicycle"];

/// Physical constants of the three benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Mass-spring-damper mass, kg.
    pub msd_mass: f64,
    /// Spring constant, kg s^-2.
    pub msd_spring: f64,
    /// Damper constant, kg s^-1.
    pub msd_damper: f64,
    /// Pendulum mass, kg.
    pub pendulum_mass: f64,
    /// Pendulum length, m.
    pub pendulum_length: f64,
    pub gravity: f64,
    /// Bicycle wheelbase, m.
    pub car_length: f64,
    /// Sampling time, s.
    pub dt: f64,
    pub horizon: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            msd_mass: 1.0,
            msd_spring: 0.2,
            msd_damper: 0.1,
            pendulum_mass: 1.0,
            pendulum_length: 0.8,
            gravity: 9.81,
            car_length: 0.115,
            dt: 0.1,
            horizon: 10,
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

/// Single input upper bound `u[index] <= bound` on a stage of width `n + m`.
fn input_bound(n: usize, m: usize, index: usize, bound: f64) -> Polytope {
    let mut h_mat = DMatrix::zeros(1, n + m);
    h_mat[(0, n + index)] = 1.0;
    Polytope {
        h_mat,
        h_vec: DVector::from_element(1, bound),
    }
}

#[derive(Debug, Clone)]
pub struct MassSpringDamper {
    pub mass: f64,
    pub spring: f64,
    pub damper: f64,
}

impl ContinuousDynamics for MassSpringDamper {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![
            x[1],
            (-self.spring * x[0] - self.damper * x[1] + u[0]) / self.mass,
        ])
    }

    fn rhs_jacobian(&self, _x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -self.spring / self.mass, -self.damper / self.mass]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / self.mass]),
        )
    }

    fn rhs_weighted_hessian(&self, _x: &[f64], _u: &[f64], _w: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl ContinuousDynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let inertia = self.mass * self.length * self.length;
        DVector::from_vec(vec![x[1], -self.gravity / self.length * x[0].sin() + u[0] / inertia])
    }

    fn rhs_jacobian(&self, x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let inertia = self.mass * self.length * self.length;
        (
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -self.gravity / self.length * x[0].cos(), 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / inertia]),
        )
    }

    fn rhs_weighted_hessian(&self, x: &[f64], _u: &[f64], w: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 0)] = w[1] * self.gravity / self.length * x[0].sin();
        h
    }
}

/// Kinematic bicycle: state (px, py, heading, steering angle), input (speed, steering rate).
#[derive(Debug, Clone)]
pub struct Bicycle {
    pub length: f64,
}

/// Below this `|cos(steering)|` the model is treated as singular.
const STEERING_COS_FLOOR: f64 = 1e-6;

impl ContinuousDynamics for Bicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![
            u[0] * x[2].cos(),
            u[0] * x[2].sin(),
            u[0] * x[3].tan() / self.length,
            u[1],
        ])
    }

    fn rhs_jacobian(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s3, c3) = x[2].sin_cos();
        let sec2 = 1.0 / (x[3].cos() * x[3].cos());
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0,
                0.0,
                -u[0] * s3,
                0.0, //
                0.0,
                0.0,
                u[0] * c3,
                0.0, //
                0.0,
                0.0,
                0.0,
                u[0] * sec2 / self.length, //
                0.0,
                0.0,
                0.0,
                0.0,
            ],
        );
        let b = DMatrix::from_row_slice(4, 2, &[c3, 0.0, s3, 0.0, x[3].tan() / self.length, 0.0, 0.0, 1.0]);
        (a, b)
    }

    fn rhs_weighted_hessian(&self, x: &[f64], u: &[f64], w: &[f64]) -> DMatrix<f64> {
        // variables (x0..x3, u0, u1); only x2, x3, u0 enter nonlinearly
        let (s3, c3) = x[2].sin_cos();
        let t4 = x[3].tan();
        let sec2 = 1.0 + t4 * t4;
        let mut h = DMatrix::zeros(6, 6);
        h[(2, 2)] = -w[0] * u[0] * c3 - w[1] * u[0] * s3;
        let h24 = -w[0] * s3 + w[1] * c3;
        h[(2, 4)] = h24;
        h[(4, 2)] = h24;
        h[(3, 3)] = w[2] * u[0] * 2.0 * sec2 * t4 / self.length;
        let h34 = w[2] * sec2 / self.length;
        h[(3, 4)] = h34;
        h[(4, 3)] = h34;
        h
    }

    fn check(&self, x: &[f64], _u: &[f64]) -> std::result::Result<(), String> {
        if x[3].cos().abs() < STEERING_COS_FLOOR || !x[3].is_finite() {
            Err(format!("steering angle {} at tangent singularity", x[3]))
        } else {
            Ok(())
        }
    }
}

pub fn make_msd(params: &SystemParams) -> Result<OcpSpec> {
    require_positive("mass", params.msd_mass)?;
    require_positive("spring constant", params.msd_spring)?;
    require_positive("damper constant", params.msd_damper)?;
    require_positive("dt", params.dt)?;
    let dynamics = BackwardEuler::new(
        MassSpringDamper {
            mass: params.msd_mass,
            spring: params.msd_spring,
            damper: params.msd_damper,
        },
        params.dt,
    );
    let features = QuadraticFeatures::new(3, vec![(0, 3.0), (1, 0.0), (2, 0.0)])?;
    OcpSpec::new(
        "msd",
        Arc::new(dynamics),
        Arc::new(features),
        input_bound(2, 1, 0, 0.55),
        params.horizon,
        DVector::from_vec(vec![1.0, 0.1]),
        params.dt,
        Some(Theta::new(&[10.0, 5.0, 7.0])?),
    )
}

pub fn make_pendulum(params: &SystemParams) -> Result<OcpSpec> {
    require_positive("mass", params.pendulum_mass)?;
    require_positive("length", params.pendulum_length)?;
    require_positive("gravity", params.gravity)?;
    require_positive("dt", params.dt)?;
    let dynamics = BackwardEuler::new(
        Pendulum {
            mass: params.pendulum_mass,
            length: params.pendulum_length,
            gravity: params.gravity,
        },
        params.dt,
    );
    let features = QuadraticFeatures::new(3, vec![(0, 0.5), (1, 0.1), (2, 0.0)])?;
    OcpSpec::new(
        "pendulum",
        Arc::new(dynamics),
        Arc::new(features),
        input_bound(2, 1, 0, 1.90),
        params.horizon,
        DVector::from_vec(vec![1.5, 0.5]),
        params.dt,
        Some(Theta::new(&[10.0, 5.0, 7.0])?),
    )
}

pub fn make_bicycle(params: &SystemParams) -> Result<OcpSpec> {
    require_positive("car length", params.car_length)?;
    require_positive("dt", params.dt)?;
    let dynamics = BackwardEuler::new(
        Bicycle {
            length: params.car_length,
        },
        params.dt,
    );
    let features = QuadraticFeatures::new(6, vec![(0, 3.0), (1, 3.0), (2, 0.0), (3, 0.0), (4, 0.0), (5, 0.0)])?;
    OcpSpec::new(
        "bicycle",
        Arc::new(dynamics),
        Arc::new(features),
        input_bound(4, 2, 1, 0.35),
        params.horizon,
        DVector::zeros(4),
        params.dt,
        Some(Theta::new(&[10.0, 10.0, 3.0, 3.0, 8.0, 5.0])?),
    )
}

/// Looks up a benchmark by name.
pub fn make_system(name: &str, params: &SystemParams) -> Result<OcpSpec> {
    match name {
        "msd" => make_msd(params),
        "pendulum" => make_pendulum(params),
        "bicycle" => make_bicycle(params),
        other => Err(Error::InvalidInput(format!(
            "unknown system `{other}` (expected one of {SYSTEM_NAMES:?})"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let p = SystemParams::default();
        assert_eq!((p.msd_mass, p.msd_spring, p.msd_damper), (1.0, 0.2, 0.1));
        assert_eq!((p.pendulum_mass, p.pendulum_length, p.gravity), (1.0, 0.8, 9.81));
        assert_eq!(p.car_length, 0.115);
        assert_eq!(p.dt, 0.1);
    }

    #[test]
    fn ground_truth_weights() {
        let p = SystemParams::default();
        assert_eq!(make_msd(&p).unwrap().theta_star.unwrap().as_slice(), &[10.0, 5.0, 7.0]);
        assert_eq!(
            make_pendulum(&p).unwrap().theta_star.unwrap().as_slice(),
            &[10.0, 5.0, 7.0]
        );
        assert_eq!(
            make_bicycle(&p).unwrap().theta_star.unwrap().as_slice(),
            &[10.0, 10.0, 3.0, 3.0, 8.0, 5.0]
        );
    }

    #[test]
    fn equilibria_have_zero_residual() {
        let p = SystemParams::default();
        let msd = make_msd(&p).unwrap();
        assert_eq!(msd.dynamics.residual(&[0.0, 0.0], &[0.0, 0.0], &[0.0]).amax(), 0.0);
        let pend = make_pendulum(&p).unwrap();
        assert_eq!(pend.dynamics.residual(&[0.0, 0.0], &[0.0, 0.0], &[0.0]).amax(), 0.0);
        let bike = make_bicycle(&p).unwrap();
        let z = [0.0; 4];
        assert_eq!(bike.dynamics.residual(&z, &z, &[0.0, 0.0]).amax(), 0.0);
    }

    #[test]
    fn msd_implicit_step_matches_direct_solve() {
        let p = SystemParams::default();
        let spec = make_msd(&p).unwrap();
        let (next, _) = spec.implicit_step(0, &[1.0, 0.0], &[0.0]).unwrap();
        // (I - dt A) x' = x
        let dt = p.dt;
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -dt, dt * 0.2, 1.0 + dt * 0.1]);
        let direct = m.lu().solve(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((next - &direct).amax() < 1e-14);
        let r = spec.dynamics.residual(direct.as_slice(), &[1.0, 0.0], &[0.0]);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn pendulum_step_matches_fixed_point_oracle() {
        let p = SystemParams::default();
        let spec = make_pendulum(&p).unwrap();
        let (next, iters) = spec.implicit_step(0, &[1.5, 0.5], &[0.0]).unwrap();
        assert!(iters <= 10);
        // damped fixed-point iteration x' = x + dt f(x'), run far past convergence
        let model = Pendulum {
            mass: 1.0,
            length: 0.8,
            gravity: 9.81,
        };
        let x = DVector::from_vec(vec![1.5, 0.5]);
        let mut y = x.clone();
        for _ in 0..2000 {
            let target = &x + model.rhs(y.as_slice(), &[0.0]) * p.dt;
            y = &y * 0.5 + target * 0.5;
        }
        assert!((next - y).amax() < 1e-8);
    }

    #[test]
    fn bicycle_straight_line() {
        let p = SystemParams::default();
        let spec = make_bicycle(&p).unwrap();
        let u = DVector::from_vec([1.0, 0.0].repeat(spec.horizon));
        let traj = spec.rollout(&u).unwrap();
        for k in 0..=spec.horizon {
            let xk = traj.state(k);
            assert!((xk[0] - p.dt * k as f64).abs() < 1e-12);
            assert_eq!(&xk[1..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn bicycle_tangent_singularity_names_stage() {
        let p = SystemParams::default();
        let spec = make_bicycle(&p).unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let err = spec
            .implicit_step(3, &[0.0, 0.0, 0.0, half_pi], &[1.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::StageFailure { stage: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_system_name() {
        assert!(make_system("cartpole", &SystemParams::default()).is_err());
        for name in SYSTEM_NAMES {
            assert_eq!(make_system(name, &SystemParams::default()).unwrap().name, name);
        }
    }
}
