//! Noise-relaxed exact-penalty estimator.
//!
//! A single set of weights and multipliers is fitted against Jacobians
//! averaged over the demonstrations. The penalty block replaces the
//! derivative of `max(0, g)` by the derivative of its Gaussian expectation,
//! so constraints near the boundary contribute in proportion to how likely
//! the noise is to have moved them across it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::psi::{psi, psi_dmu};
use super::{fit, Anchor, Diagnostics, EstimationResult, Method, Regression, DEFAULT_ACTIVATION_TOL};
use crate::demos::{mean_trajectory, DemoSet};
use crate::error::{Error, Result};
use crate::jacobians::{self, free_rows};
use crate::model::{OcpSpec, Theta};

/// Where the per-stage covariance used for smoothing comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    /// The covariance stored with the demonstration set.
    Configured,
    /// Sample covariance of each stage across demonstrations.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpOptions {
    /// Penalty columns with `psi <= cutoff` are dropped; `cutoff <= 0` keeps
    /// every column with a nonzero derivative.
    pub cutoff: f64,
    pub sigma: SigmaSource,
    /// Snapping tolerance for `max(0, .)` when a row has no noise.
    pub snap_tol: f64,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self {
            cutoff: 0.005,
            sigma: SigmaSource::Configured,
            snap_tol: DEFAULT_ACTIVATION_TOL,
        }
    }
}

impl EpOptions {
    pub fn with_cutoff(cutoff: f64) -> Self {
        Self {
            cutoff,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeanJacobians {
    /// b x q.
    pub theta: DMatrix<f64>,
    /// b x nN.
    pub v: DMatrix<f64>,
    /// b x pN, masked columns zeroed.
    pub rho: DMatrix<f64>,
    /// Smoothed penalty value per constraint row, length pN.
    pub psi: DVector<f64>,
    pub mask: Vec<bool>,
    pub sigma_source: SigmaSource,
}

fn stage_covariances(spec: &OcpSpec, ds: &DemoSet, source: SigmaSource) -> Result<Vec<DMatrix<f64>>> {
    let w = spec.n() + spec.m();
    match source {
        SigmaSource::Configured => {
            if ds.noise.sigma_t.nrows() != w || ds.noise.sigma_t.ncols() != w {
                return Err(Error::dim("stage covariance", w, ds.noise.sigma_t.nrows()));
            }
            Ok(vec![ds.noise.sigma_t.clone(); spec.horizon])
        }
        SigmaSource::Empirical => {
            let d = ds.demos.len();
            let mean = mean_trajectory(ds)?;
            Ok((0..spec.horizon)
                .map(|k| {
                    let tbar = mean.stage(k);
                    let mut s = DMatrix::zeros(w, w);
                    if d > 1 {
                        for demo in &ds.demos {
                            let e = demo.stage(k) - &tbar;
                            s += &e * e.transpose();
                        }
                        s /= (d - 1) as f64;
                    }
                    s
                })
                .collect())
        }
    }
}

pub fn build_mean_jacobians(spec: &OcpSpec, ds: &DemoSet, opts: &EpOptions) -> Result<MeanJacobians> {
    if ds.demos.is_empty() {
        return Err(Error::InvalidInput("at least one demonstration is required".into()));
    }
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let b = spec.num_vars();
    let mut theta = DMatrix::zeros(b, spec.q());
    let mut v = DMatrix::zeros(b, n * spec.horizon);
    for demo in &ds.demos {
        theta += jacobians::feature_sum_jacobian(spec, demo)?;
        v += jacobians::dynamics_jacobian(spec, demo)?;
    }
    let inv = 1.0 / ds.demos.len() as f64;
    theta *= inv;
    v *= inv;

    let sigmas = stage_covariances(spec, ds, opts.sigma)?;
    let mean = mean_trajectory(ds)?;
    let mut rho = DMatrix::zeros(b, p * spec.horizon);
    let mut psi_vals = DVector::zeros(p * spec.horizon);
    let mut mask = vec![false; p * spec.horizon];
    for k in 0..spec.horizon {
        let tbar = mean.stage(k);
        for j in 0..p {
            let hj = spec.constraints.h_mat.row(j);
            let mu = (hj * &tbar)[0] - spec.constraints.h_vec[j];
            let var = (hj * &sigmas[k] * hj.transpose())[0];
            let sigma = var.max(0.0).sqrt();
            let (deriv, value) = if sigma > 0.0 {
                (psi_dmu(mu, sigma)?, psi(mu, sigma))
            } else {
                let snap = opts.snap_tol * (1.0 + spec.constraints.h_vec[j].abs());
                let mu = if mu.abs() <= snap { 0.0 } else { mu };
                (if mu >= 0.0 { 1.0 } else { 0.0 }, mu.max(0.0))
            };
            let col = k * p + j;
            psi_vals[col] = value;
            let keep = deriv > 0.0 && (opts.cutoff <= 0.0 || value > opts.cutoff);
            if !keep {
                continue;
            }
            mask[col] = true;
            for i in 0..n + m {
                rho[(spec.stage_index(k, i), col)] = hj[i] * deriv;
            }
        }
    }
    Ok(MeanJacobians {
        theta,
        v,
        rho,
        psi: psi_vals,
        mask,
        sigma_source: opts.sigma,
    })
}

/// Shared `(theta, v, rho)` fitted against the mean Jacobians, `rho >= 0` on
/// the columns that survive the cutoff.
pub fn estimate_ep(spec: &OcpSpec, ds: &DemoSet, opts: &EpOptions, anchor: &Anchor) -> Result<EstimationResult> {
    let mj = build_mean_jacobians(spec, ds, opts)?;
    let rows = free_rows(spec);
    let (q, nn) = (spec.q(), spec.n() * spec.horizon);
    let kept: Vec<usize> = (0..mj.mask.len()).filter(|&j| mj.mask[j]).collect();
    let mut a = DMatrix::zeros(rows.len(), q + nn + kept.len());
    a.view_mut((0, 0), (rows.len(), q))
        .copy_from(&mj.theta.rows(rows.start, rows.len()));
    a.view_mut((0, q), (rows.len(), nn))
        .copy_from(&mj.v.rows(rows.start, rows.len()));
    for (c, &j) in kept.iter().enumerate() {
        a.view_mut((0, q + nn + c), (rows.len(), 1))
            .copy_from(&mj.rho.view((rows.start, j), (rows.len(), 1)));
    }
    let reg = Regression {
        a,
        q,
        nonneg: (q + nn..q + nn + kept.len()).collect(),
    };
    let mut f = fit(&reg, anchor)?;
    if kept.is_empty() && spec.p() > 0 {
        f.warnings
            .push("no penalty columns survived the cutoff; fitted without constraint terms".into());
    }
    let mut rho = DVector::zeros(mj.mask.len());
    for (c, &j) in kept.iter().enumerate() {
        rho[j] = f.beta[q + nn + c];
    }
    Ok(EstimationResult {
        theta: Theta(f.theta.clone()),
        method: Method::Ep,
        v: f.beta.rows(q, nn).into_owned(),
        multipliers: rho,
        mask: mj.mask,
        residual_norm: f.residual_norm,
        diagnostics: Diagnostics {
            anchor: *anchor,
            demos: ds.demos.len(),
            noise_pct: ds.noise.pct,
            sigma_source: Some(mj.sigma_source),
            rank_deficient: f.rank_deficient,
            optimality_violation: f.optimality_violation,
            warnings: f.warnings,
        },
    })
}
