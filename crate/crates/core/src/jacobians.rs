//! Evaluation of the stacked stationarity ingredients.
//!
//! All matrices have one row per decision variable, in the order
//! `(x_0, ..., x_N, u_0, ..., u_{N-1})`, so that the stationarity residual of
//! the Lagrangian is `J_theta * theta + J_v * v + J_lambda * lambda`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{OcpSpec, Trajectory};

/// Jacobian of `sum_k phi(x_k, u_k)`, transposed: b x q.
pub fn feature_sum_jacobian(spec: &OcpSpec, traj: &Trajectory) -> Result<DMatrix<f64>> {
    spec.check_trajectory(traj)?;
    let (n, m, q) = (spec.n(), spec.m(), spec.q());
    let mut j = DMatrix::zeros(spec.num_vars(), q);
    for k in 0..spec.horizon {
        let jk = spec.features.jacobian(traj.state(k), traj.input(k));
        if jk.nrows() != q || jk.ncols() != n + m {
            return Err(Error::dim("feature Jacobian rows", q, jk.nrows()));
        }
        for i in 0..n + m {
            let row = spec.stage_index(k, i);
            for c in 0..q {
                j[(row, c)] = jk[(c, i)];
            }
        }
    }
    Ok(j)
}

/// Sum of features over the horizon.
pub fn feature_sums(spec: &OcpSpec, traj: &Trajectory) -> Result<DVector<f64>> {
    spec.check_trajectory(traj)?;
    let mut s = DVector::zeros(spec.q());
    for k in 0..spec.horizon {
        s += spec.features.eval(traj.state(k), traj.input(k));
    }
    Ok(s)
}

/// Stacked dynamics residuals `F(X, U)`, length nN.
pub fn dynamics_residuals(spec: &OcpSpec, traj: &Trajectory) -> Result<DVector<f64>> {
    spec.check_trajectory(traj)?;
    let n = spec.n();
    let mut f = DVector::zeros(n * spec.horizon);
    for k in 0..spec.horizon {
        let r = spec.dynamics.residual(traj.state(k + 1), traj.state(k), traj.input(k));
        f.rows_mut(k * n, n).copy_from(&r);
    }
    Ok(f)
}

/// Jacobian of `F(X, U)`, transposed: b x nN.
pub fn dynamics_jacobian(spec: &OcpSpec, traj: &Trajectory) -> Result<DMatrix<f64>> {
    spec.check_trajectory(traj)?;
    let (n, m) = (spec.n(), spec.m());
    let mut j = DMatrix::zeros(spec.num_vars(), n * spec.horizon);
    for k in 0..spec.horizon {
        let sj = spec.dynamics.jacobian(traj.state(k + 1), traj.state(k), traj.input(k));
        for r in 0..n {
            let col = k * n + r;
            for i in 0..n {
                j[(spec.state_index(k + 1, i), col)] = sj.next[(r, i)];
                j[(spec.state_index(k, i), col)] = sj.state[(r, i)];
            }
            for i in 0..m {
                j[(spec.input_index(k, i), col)] = sj.input[(r, i)];
            }
        }
    }
    Ok(j)
}

/// Stacked constraint values `G(X, U)`; entry `k*p + j` is `H[j,:] t_k - h[j]`.
pub fn constraint_values(spec: &OcpSpec, traj: &Trajectory) -> Result<DVector<f64>> {
    spec.check_trajectory(traj)?;
    let p = spec.p();
    let mut g = DVector::zeros(p * spec.horizon);
    for k in 0..spec.horizon {
        let gk = &spec.constraints.h_mat * traj.stage(k) - &spec.constraints.h_vec;
        g.rows_mut(k * p, p).copy_from(&gk);
    }
    Ok(g)
}

/// Elementwise `max(0, g)`.
pub fn gmax(spec: &OcpSpec, traj: &Trajectory) -> Result<DVector<f64>> {
    Ok(constraint_values(spec, traj)?.map(|g| g.max(0.0)))
}

/// Jacobian of `G(X, U)`, transposed: b x pN.
pub fn constraint_jacobian(spec: &OcpSpec, traj: &Trajectory) -> Result<DMatrix<f64>> {
    spec.check_trajectory(traj)?;
    Ok(constraint_jacobian_unchecked(spec))
}

pub(crate) fn constraint_jacobian_unchecked(spec: &OcpSpec) -> DMatrix<f64> {
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let mut j = DMatrix::zeros(spec.num_vars(), p * spec.horizon);
    for k in 0..spec.horizon {
        for r in 0..p {
            for i in 0..n + m {
                j[(spec.stage_index(k, i), k * p + r)] = spec.constraints.h_mat[(r, i)];
            }
        }
    }
    j
}

/// Jacobian of `G_max(X, U)`, transposed: b x pN.
///
/// Uses the right-hand derivative of `max(0, .)`, so a column is nonzero iff
/// its constraint value is `>= 0`. Values with `|g| <= snap_tol * (1 + |h[j]|)`
/// count as exactly zero.
pub fn penalty_jacobian(spec: &OcpSpec, traj: &Trajectory, snap_tol: f64) -> Result<DMatrix<f64>> {
    let g = constraint_values(spec, traj)?;
    let mut j = constraint_jacobian_unchecked(spec);
    let p = spec.p();
    for (col, gi) in g.iter().enumerate() {
        let tol = snap_tol * (1.0 + spec.constraints.h_vec[col % p.max(1)].abs());
        let snapped = if gi.abs() <= tol { 0.0 } else { *gi };
        if snapped < 0.0 {
            j.column_mut(col).fill(0.0);
        }
    }
    Ok(j)
}

/// Rows of the stationarity system that carry information: all but `x_0`,
/// which is fixed by the initial condition.
pub fn free_rows(spec: &OcpSpec) -> std::ops::Range<usize> {
    spec.n()..spec.num_vars()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_msd, SystemParams};

    fn msd_traj() -> (OcpSpec, Trajectory) {
        let spec = make_msd(&SystemParams::default()).unwrap();
        let mut traj = Trajectory::zeros(2, 1, spec.horizon);
        for k in 0..=spec.horizon {
            traj.x[2 * k] = 1.0 + 0.1 * k as f64;
            traj.x[2 * k + 1] = 0.1;
        }
        traj.u.fill(0.2);
        (spec, traj)
    }

    #[test]
    fn msd_feature_jacobian_entry() {
        let (spec, traj) = msd_traj();
        let j = feature_sum_jacobian(&spec, &traj).unwrap();
        // d/dx1 (x1 - 3)^2 at x1 = 1
        assert!((j[(spec.state_index(0, 0), 0)] + 4.0).abs() < 1e-14);
        assert!((j[(spec.state_index(0, 1), 1)] - 0.2).abs() < 1e-14);
        assert!((j[(spec.input_index(0, 0), 2)] - 0.4).abs() < 1e-14);
        // x_N carries no stage cost
        for c in 0..3 {
            assert_eq!(j[(spec.state_index(spec.horizon, 0), c)], 0.0);
        }
    }

    #[test]
    fn constraint_values_and_gmax() {
        let (spec, mut traj) = msd_traj();
        traj.u[0] = 0.55;
        traj.u[1] = 0.6;
        traj.u[2] = 0.5;
        let g = constraint_values(&spec, &traj).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.05).abs() < 1e-15);
        let gm = gmax(&spec, &traj).unwrap();
        assert!((gm[1] - 0.05).abs() < 1e-15);
        assert_eq!(gm[2], 0.0);
        assert!(g[2] < 0.0);
    }

    #[test]
    fn penalty_jacobian_keeps_boundary_columns() {
        let (spec, mut traj) = msd_traj();
        traj.u[0] = 0.55;
        traj.u[1] = 0.6;
        let jr = penalty_jacobian(&spec, &traj, 1e-9).unwrap();
        assert_eq!(jr[(spec.input_index(0, 0), 0)], 1.0);
        assert_eq!(jr[(spec.input_index(1, 0), 1)], 1.0);
        assert_eq!(jr.column(2).amax(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (spec, _) = msd_traj();
        let bad = Trajectory::zeros(3, 1, spec.horizon);
        assert!(matches!(
            feature_sum_jacobian(&spec, &bad),
            Err(Error::Dimension { .. })
        ));
        assert!(dynamics_jacobian(&spec, &bad).is_err());
    }
}
