//! Central finite-difference checks for analytic Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jacobians;
use crate::model::{OcpSpec, Trajectory};

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub passed: bool,
    pub max_abs_dev: f64,
    /// `max |analytic - fd| / max(1, |analytic|)`, the quantity compared against `tol`.
    pub max_rel_dev: f64,
    /// (output row, input column) of the worst entry.
    pub worst: (usize, usize),
}

/// Central-difference Jacobian of `f` at `point`, outputs x inputs.
pub fn central_difference<F>(f: F, point: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(point);
    let mut jac = DMatrix::zeros(f0.len(), point.len());
    let mut probe = point.clone();
    for col in 0..point.len() {
        probe[col] = point[col] + step;
        let fp = f(&probe);
        probe[col] = point[col] - step;
        let fm = f(&probe);
        probe[col] = point[col];
        if fp.len() != f0.len() || fm.len() != f0.len() {
            return Err(Error::dim("function output", f0.len(), fp.len()));
        }
        for row in 0..f0.len() {
            let d = (fp[row] - fm[row]) / (2.0 * step);
            if !d.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            jac[(row, col)] = d;
        }
    }
    Ok(jac)
}

/// Compares `analytic` (outputs x inputs) against central differences of `f`.
/// Passes iff every entry deviates by less than `tol` relative to
/// `max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, point: &DVector<f64>, analytic: &DMatrix<f64>, tol: f64) -> Result<FdReport>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fd = central_difference(f, point, FD_STEP)?;
    if fd.shape() != analytic.shape() {
        return Err(Error::dim(
            "analytic Jacobian size",
            fd.nrows() * fd.ncols(),
            analytic.nrows() * analytic.ncols(),
        ));
    }
    let mut report = FdReport {
        passed: true,
        max_abs_dev: 0.0,
        max_rel_dev: 0.0,
        worst: (0, 0),
    };
    for row in 0..fd.nrows() {
        for col in 0..fd.ncols() {
            let a = analytic[(row, col)];
            if !a.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            let dev = (a - fd[(row, col)]).abs();
            let rel = dev / a.abs().max(1.0);
            report.max_abs_dev = report.max_abs_dev.max(dev);
            if rel > report.max_rel_dev {
                report.max_rel_dev = rel;
                report.worst = (row, col);
            }
        }
    }
    report.passed = report.max_rel_dev < tol;
    Ok(report)
}

/// Worst of several reports, keeping the location of the worst entry.
fn merge(acc: Option<FdReport>, next: FdReport) -> FdReport {
    match acc {
        None => next,
        Some(a) => {
            let worst = if next.max_rel_dev > a.max_rel_dev {
                next.worst
            } else {
                a.worst
            };
            FdReport {
                passed: a.passed && next.passed,
                max_abs_dev: a.max_abs_dev.max(next.max_abs_dev),
                max_rel_dev: a.max_rel_dev.max(next.max_rel_dev),
                worst,
            }
        }
    }
}

/// Checks every analytic derivative the solver and estimators use at `traj`:
/// the stacked feature, dynamics and constraint Jacobians and the per-stage
/// weighted Hessians of the dynamics (weights `w`) and features (`theta`).
pub fn check_model_derivatives(
    spec: &OcpSpec,
    traj: &Trajectory,
    theta: &[f64],
    w: &[f64],
    tol: f64,
) -> Result<Vec<(&'static str, FdReport)>> {
    spec.check_trajectory(traj)?;
    let (n, m, horizon) = (spec.n(), spec.m(), spec.horizon);
    if theta.len() != spec.q() {
        return Err(Error::dim("weights", spec.q(), theta.len()));
    }
    if w.len() != n {
        return Err(Error::dim("residual weights", n, w.len()));
    }
    let z = traj.to_z();
    let at = |z: &DVector<f64>| Trajectory::from_z(n, m, horizon, z).expect("length preserved");
    let mut out = Vec::new();

    let jt = jacobians::feature_sum_jacobian(spec, traj)?.transpose();
    let f = |z: &DVector<f64>| jacobians::feature_sums(spec, &at(z)).expect("valid trajectory");
    out.push(("feature_sum_jacobian", finite_difference_check(f, &z, &jt, tol)?));

    let jv = jacobians::dynamics_jacobian(spec, traj)?.transpose();
    let f = |z: &DVector<f64>| jacobians::dynamics_residuals(spec, &at(z)).expect("valid trajectory");
    out.push(("dynamics_jacobian", finite_difference_check(f, &z, &jv, tol)?));

    let jg = jacobians::constraint_jacobian(spec, traj)?.transpose();
    let f = |z: &DVector<f64>| jacobians::constraint_values(spec, &at(z)).expect("valid trajectory");
    out.push(("constraint_jacobian", finite_difference_check(f, &z, &jg, tol)?));

    let mut dyn_hess = None;
    let mut feat_hess = None;
    for k in 0..horizon {
        let s: Vec<f64> = [traj.state(k + 1), traj.state(k), traj.input(k)].concat();
        let grad = |s: &DVector<f64>| {
            let sj = spec
                .dynamics
                .jacobian(&s.as_slice()[..n], &s.as_slice()[n..2 * n], &s.as_slice()[2 * n..]);
            let wv = DVector::from_column_slice(w);
            let mut g = DVector::zeros(2 * n + m);
            g.rows_mut(0, n).copy_from(&(sj.next.transpose() * &wv));
            g.rows_mut(n, n).copy_from(&(sj.state.transpose() * &wv));
            g.rows_mut(2 * n, m).copy_from(&(sj.input.transpose() * &wv));
            g
        };
        let h = spec
            .dynamics
            .weighted_hessian(traj.state(k + 1), traj.state(k), traj.input(k), w);
        let rep = finite_difference_check(grad, &DVector::from_vec(s), &h, tol)?;
        dyn_hess = Some(merge(dyn_hess, rep));

        let t = traj.stage(k);
        let th = DVector::from_column_slice(theta);
        let grad = |t: &DVector<f64>| {
            spec.features
                .jacobian(&t.as_slice()[..n], &t.as_slice()[n..])
                .transpose()
                * &th
        };
        let h = spec.features.weighted_hessian(traj.state(k), traj.input(k), theta);
        let rep = finite_difference_check(grad, &t, &h, tol)?;
        feat_hess = Some(merge(feat_hess, rep));
    }
    if let Some(r) = dyn_hess {
        out.push(("dynamics_hessian", r));
    }
    if let Some(r) = feat_hess {
        out.push(("feature_hessian", r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let p = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let rep = finite_difference_check(|z| &a * z, &p, &a, 1e-8).unwrap();
        assert!(rep.passed);
        assert!(rep.max_abs_dev < 1e-8);
    }

    #[test]
    fn corrupted_entry_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut bad = a.clone();
        bad[(1, 0)] += 0.1;
        let p = DVector::from_vec(vec![1.0, 1.0]);
        let rep = finite_difference_check(|z| &a * z, &p, &bad, 1e-5).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.worst, (1, 0));
    }

    #[test]
    fn non_finite_reports_location() {
        let p = DVector::from_vec(vec![0.0, 1.0]);
        let f = |z: &DVector<f64>| DVector::from_vec(vec![z[1], z[0].ln()]);
        let err = finite_difference_check(f, &p, &DMatrix::zeros(2, 2), 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 0 }));
    }
}
