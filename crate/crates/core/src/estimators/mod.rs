//! Cost-weight estimators.
//!
//! Every estimator stacks stationarity Jacobians into a homogeneous
//! regression `A beta ~ 0` with `beta = (theta, duals)`, fixes the scale
//! through an [`Anchor`], and hands the result to [`crate::cls::solve_cls`].

mod ep;
mod psi;

pub use ep::{build_mean_jacobians, estimate_ep, EpOptions, MeanJacobians, SigmaSource};
pub use psi::{normal_cdf, normal_pdf, psi, psi_dmu};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cls::{solve_cls, ClsProblem};
use crate::demos::DemoSet;
use crate::error::{Error, Result};
use crate::jacobians::{self, free_rows};
use crate::model::{OcpSpec, Theta, Trajectory};

/// `|g| <= tol * (1 + |h_j|)` counts as active for noiseless estimators.
pub const DEFAULT_ACTIVATION_TOL: f64 = 1e-6;

/// Activation threshold applied to noisy demonstrations; only values that
/// are zero up to roundoff free a multiplier.
pub const NOISY_ACTIVATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    ExactKkt,
    ExactEp,
    Kkt,
    Tr,
    Ep,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ExactKkt => "EXACT_KKT",
            Method::ExactEp => "EXACT_EP",
            Method::Kkt => "KKT",
            Method::Tr => "TR",
            Method::Ep => "EP",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scale normalization of the homogeneous regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anchor {
    /// `theta[index] = value`.
    Fixed { index: usize, value: f64 },
    /// `||theta|| = 1` on the retained dual set, then rescaled so that
    /// `theta[index] = value`.
    UnitNorm { index: usize, value: f64 },
}

impl Anchor {
    /// `theta[0]` pinned to the ground-truth value stored in `spec`.
    pub fn from_spec(spec: &OcpSpec) -> Result<Self> {
        let theta = spec
            .theta_star
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{} has no reference weights to anchor on", spec.name)))?;
        Ok(Anchor::Fixed {
            index: 0,
            value: theta.0[0],
        })
    }

    pub fn index(&self) -> usize {
        match *self {
            Anchor::Fixed { index, .. } | Anchor::UnitNorm { index, .. } => index,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Anchor::Fixed { value, .. } | Anchor::UnitNorm { value, .. } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub anchor: Anchor,
    pub demos: usize,
    pub noise_pct: Option<f64>,
    pub sigma_source: Option<SigmaSource>,
    pub rank_deficient: bool,
    pub optimality_violation: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub theta: Theta,
    pub method: Method,
    /// Dynamics multipliers; one block of length nN per demonstration for
    /// KKT and TR, a single block otherwise.
    pub v: DVector<f64>,
    /// Constraint multipliers (lambda) or penalty weights (rho), with zeros
    /// in masked-out coordinates. Same blocking as `v`.
    pub multipliers: DVector<f64>,
    /// Coordinates of `multipliers` that were estimated.
    pub mask: Vec<bool>,
    /// `||A beta||` of the solved regression.
    pub residual_norm: f64,
    pub diagnostics: Diagnostics,
}

/// Root-mean-square difference.
pub fn rmse(theta_hat: &[f64], theta_star: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::dim("weight vector", theta_star.len(), theta_hat.len()));
    }
    if theta_hat.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    let ss: f64 = theta_hat.iter().zip(theta_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / theta_hat.len() as f64).sqrt())
}

/// Stationarity blocks of one trajectory on the informative rows.
struct Blocks {
    theta: DMatrix<f64>,
    v: DMatrix<f64>,
    g_jac: DMatrix<f64>,
    g: DVector<f64>,
}

fn blocks(spec: &OcpSpec, traj: &Trajectory) -> Result<Blocks> {
    let rows = free_rows(spec);
    let take = |m: DMatrix<f64>| m.rows(rows.start, rows.len()).into_owned();
    let theta = take(jacobians::feature_sum_jacobian(spec, traj)?);
    if theta.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("feature Jacobian is identically zero".into()));
    }
    Ok(Blocks {
        theta,
        v: take(jacobians::dynamics_jacobian(spec, traj)?),
        g_jac: take(jacobians::constraint_jacobian(spec, traj)?),
        g: jacobians::constraint_values(spec, traj)?,
    })
}

fn is_active(spec: &OcpSpec, g: f64, row: usize, tol: f64) -> bool {
    let p = spec.p();
    g.abs() <= tol * (1.0 + spec.constraints.h_vec[row % p].abs())
}

/// Column layout of a stacked regression: theta first, then per group a
/// block of dynamics multipliers and a block of retained inequality columns.
struct Regression {
    a: DMatrix<f64>,
    q: usize,
    nonneg: Vec<usize>,
}

struct Fit {
    theta: DVector<f64>,
    beta: DVector<f64>,
    residual_norm: f64,
    rank_deficient: bool,
    optimality_violation: f64,
    warnings: Vec<String>,
}

fn fit(reg: &Regression, anchor: &Anchor) -> Result<Fit> {
    if anchor.index() >= reg.q {
        return Err(Error::InvalidInput(format!(
            "anchor index {} out of range for {} weights",
            anchor.index(),
            reg.q
        )));
    }
    let prob = ClsProblem::new(reg.a.clone(), reg.nonneg.clone(), (anchor.index(), anchor.value()))?;
    let sol = solve_cls(&prob)?;
    let mut out = Fit {
        theta: sol.beta.rows(0, reg.q).into_owned(),
        residual_norm: sol.residual_norm,
        rank_deficient: sol.rank_deficient,
        optimality_violation: sol.optimality_violation,
        beta: sol.beta,
        warnings: Vec::new(),
    };
    if let Anchor::UnitNorm { index, value } = *anchor {
        unit_norm_refit(reg, &sol.positive, index, value, &mut out)?;
    }
    Ok(out)
}

/// Smallest right singular vector of the theta block after projecting out
/// the dual columns kept by the anchored fit.
fn unit_norm_refit(reg: &Regression, positive: &[bool], index: usize, value: f64, out: &mut Fit) -> Result<()> {
    let z = reg.a.ncols();
    let nonneg: std::collections::HashSet<usize> = reg.nonneg.iter().copied().collect();
    let duals: Vec<usize> = (reg.q..z).filter(|j| !nonneg.contains(j) || positive[*j]).collect();
    let a_d = DMatrix::from_fn(reg.a.nrows(), duals.len(), |i, j| reg.a[(i, duals[j])]);
    let a_t = reg.a.columns(0, reg.q).into_owned();
    let projected = if duals.is_empty() {
        a_t.clone()
    } else {
        let svd = a_d.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let tol = svd.singular_values.amax() * f64::EPSILON * a_d.nrows().max(a_d.ncols()) as f64 * 10.0;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let basis = DMatrix::from_fn(u.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
        &a_t - &basis * (basis.transpose() * &a_t)
    };
    let svd = projected.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (k, _) =
        svd.singular_values.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &s)| if s < bv { (i, s) } else { (bi, bv) },
        );
    let dir = v_t.row(k).transpose();
    if dir[index].abs() < 1e-12 {
        return Err(Error::InvalidInput(
            "unit-norm solution has a zero anchor component".into(),
        ));
    }
    let scale = value / dir[index];
    let theta = dir * scale;
    // duals for the rescaled weights
    let rhs = -(&a_t * &theta);
    let d = if duals.is_empty() {
        DVector::zeros(0)
    } else {
        a_d.svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
    };
    let mut beta = DVector::zeros(z);
    beta.rows_mut(0, reg.q).copy_from(&theta);
    for (i, &j) in duals.iter().enumerate() {
        beta[j] = d[i];
    }
    if reg.nonneg.iter().any(|&j| beta[j] < 0.0) {
        out.warnings
            .push("unit-norm refit produced negative constrained multipliers".into());
    }
    out.residual_norm = (&reg.a * &beta).norm();
    out.theta = theta;
    out.beta = beta;
    Ok(())
}

fn diagnostics(anchor: &Anchor, demos: usize, noise_pct: Option<f64>, f: &Fit) -> Diagnostics {
    Diagnostics {
        anchor: *anchor,
        demos,
        noise_pct,
        sigma_source: None,
        rank_deficient: f.rank_deficient,
        optimality_violation: f.optimality_violation,
        warnings: f.warnings.clone(),
    }
}

/// Orthogonal projector onto the complement of `range(m)` together with the
/// SVD used to recover the eliminated coefficients.
struct Elimination {
    projector: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    tol: f64,
    rank_deficient: bool,
}

fn eliminate(m: &DMatrix<f64>) -> Elimination {
    let svd = m.clone().svd(true, true);
    let tol = svd.singular_values.amax() * f64::EPSILON * m.nrows().max(m.ncols()) as f64 * 10.0;
    let u = svd.u.as_ref().expect("requested U");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let basis = DMatrix::from_fn(u.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
    Elimination {
        projector: DMatrix::identity(m.nrows(), m.nrows()) - &basis * basis.transpose(),
        rank_deficient: keep.len() < m.ncols(),
        svd,
        tol,
    }
}

/// Fits one group per demonstration, each with its own dynamics
/// multipliers. The multipliers of each group are projected out exactly
/// before the constrained solve and recovered afterwards, so the solved
/// problem only carries `theta` and the retained inequality columns.
fn stacked_estimate(
    spec: &OcpSpec,
    demos: &[Trajectory],
    anchor: &Anchor,
    method: Method,
    noise_pct: Option<f64>,
    keep: impl Fn(&OcpSpec, &Blocks) -> Vec<bool>,
) -> Result<EstimationResult> {
    if demos.is_empty() {
        return Err(Error::InvalidInput("at least one demonstration is required".into()));
    }
    let q = spec.q();
    let nn = spec.n() * spec.horizon;
    let pn = spec.p() * spec.horizon;
    let all: Vec<Blocks> = demos.iter().map(|d| blocks(spec, d)).collect::<Result<_>>()?;
    let masks: Vec<Vec<bool>> = all.iter().map(|b| keep(spec, b)).collect();
    let kept: Vec<Vec<usize>> = masks.iter().map(|m| (0..m.len()).filter(|&j| m[j]).collect()).collect();
    let rows_per = all[0].theta.nrows();
    let cols = q + kept.iter().map(Vec::len).sum::<usize>();

    let elims: Vec<Elimination> = all.iter().map(|b| eliminate(&b.v)).collect();
    let mut a = DMatrix::zeros(rows_per * demos.len(), cols);
    let mut nonneg = Vec::new();
    let mut col = q;
    for (d, b) in all.iter().enumerate() {
        let mut raw = DMatrix::zeros(rows_per, cols);
        raw.view_mut((0, 0), (rows_per, q)).copy_from(&b.theta);
        for &j in &kept[d] {
            raw.set_column(col, &b.g_jac.column(j));
            nonneg.push(col);
            col += 1;
        }
        a.view_mut((d * rows_per, 0), (rows_per, cols))
            .copy_from(&(&elims[d].projector * raw));
    }
    let f = fit(&Regression { a, q, nonneg }, anchor)?;

    // recover per-demo multipliers and the residual of the full system
    let theta = f.beta.rows(0, q).into_owned();
    let mut v = DVector::zeros(nn * demos.len());
    let mut multipliers = DVector::zeros(pn * demos.len());
    let mut residual_sq = 0.0;
    let mut col = q;
    for (d, b) in all.iter().enumerate() {
        let mut force = &b.theta * &theta;
        for &j in &kept[d] {
            multipliers[d * pn + j] = f.beta[col];
            force += b.g_jac.column(j) * f.beta[col];
            col += 1;
        }
        let vd = -elims[d]
            .svd
            .solve(&force, elims[d].tol)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        residual_sq += (&force + &b.v * &vd).norm_squared();
        v.rows_mut(d * nn, nn).copy_from(&vd);
    }
    let mut diag = diagnostics(anchor, demos.len(), noise_pct, &f);
    diag.rank_deficient |= elims.iter().any(|e| e.rank_deficient);
    Ok(EstimationResult {
        theta: Theta(theta),
        method,
        v,
        multipliers,
        mask: masks.concat(),
        residual_norm: residual_sq.sqrt(),
        diagnostics: diag,
    })
}

/// Inverse KKT on an optimal trajectory: multipliers of rows with
/// `|g| <= activation_tol * (1 + |h_j|)` are estimated, the rest are zero.
pub fn estimate_exact_kkt(
    spec: &OcpSpec,
    traj_opt: &Trajectory,
    activation_tol: f64,
    anchor: &Anchor,
) -> Result<EstimationResult> {
    stacked_estimate(
        spec,
        std::slice::from_ref(traj_opt),
        anchor,
        Method::ExactKkt,
        Some(0.0),
        |spec, b| {
            (0..b.g.len())
                .map(|i| is_active(spec, b.g[i], i, activation_tol))
                .collect()
        },
    )
}

/// Exact-penalty regression on an optimal trajectory. Columns of strictly
/// satisfied rows vanish and are masked out as unidentified.
pub fn estimate_exact_ep(spec: &OcpSpec, traj_opt: &Trajectory, anchor: &Anchor) -> Result<EstimationResult> {
    let jr = jacobians::penalty_jacobian(spec, traj_opt, DEFAULT_ACTIVATION_TOL)?;
    let mask: Vec<bool> = (0..jr.ncols()).map(|j| jr.column(j).amax() > 0.0).collect();
    let mut out = stacked_estimate(
        spec,
        std::slice::from_ref(traj_opt),
        anchor,
        Method::ExactEp,
        Some(0.0),
        |_, _| mask.clone(),
    )?;
    out.method = Method::ExactEp;
    Ok(out)
}

/// Relaxed inverse KKT with one set of dynamics multipliers per
/// demonstration. A multiplier is estimated only where the demonstration
/// sits exactly on its constraint.
pub fn estimate_kkt(spec: &OcpSpec, ds: &DemoSet, anchor: &Anchor) -> Result<EstimationResult> {
    stacked_estimate(spec, &ds.demos, anchor, Method::Kkt, ds.noise.pct, |spec, b| {
        (0..b.g.len())
            .map(|i| is_active(spec, b.g[i], i, NOISY_ACTIVATION_TOL))
            .collect()
    })
}

/// As [`estimate_kkt`], but violated rows also keep their multiplier.
pub fn estimate_tr(spec: &OcpSpec, ds: &DemoSet, anchor: &Anchor) -> Result<EstimationResult> {
    stacked_estimate(spec, &ds.demos, anchor, Method::Tr, ds.noise.pct, |spec, b| {
        (0..b.g.len())
            .map(|i| b.g[i] >= 0.0 || is_active(spec, b.g[i], i, NOISY_ACTIVATION_TOL))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!((rmse(&[10.0, 5.0, 7.0], &[10.0, 5.0, 10.0]).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!(Method::ExactKkt.to_string(), "EXACT_KKT");
        assert_eq!(serde_json::to_string(&Method::Tr).unwrap(), "\"TR\"");
    }
}
