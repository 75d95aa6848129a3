//! Self-checks of the library against its own theory: exact-penalty
//! equivalence of forward solves, agreement of the two exact estimators,
//! derivative checks, and the smoothed-penalty formula.

use std::fmt;

use iocrelax::cls::{solve_cls, ClsProblem};
use iocrelax::estimators::{estimate_exact_ep, estimate_exact_kkt, psi, psi_dmu, Anchor, DEFAULT_ACTIVATION_TOL};
use iocrelax::fdcheck::check_model_derivatives;
use iocrelax::jacobians::{dynamics_jacobian, feature_sum_jacobian, free_rows, penalty_jacobian};
use iocrelax::systems::{make_system, SystemParams, SYSTEM_NAMES};
use iocrelax::{solve_ocp, solve_penalized_ocp, OcpSpec, Theta, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const LEMMA_TOL: f64 = 1e-6;
pub const THEOREM_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-5;
pub const FD_TRAJECTORIES: usize = 20;
pub const PSI_MC_TOL: f64 = 1e-3;
pub const PSI_DMU_TOL: f64 = 1e-8;
/// Below this trajectory gap the negative control counts as "no divergence".
pub const DIVERGENCE_MIN: f64 = 1e-4;

pub const PSI_MU_GRID: [f64; 9] = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
pub const PSI_SIGMA_GRID: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Flip the sign of the penalty Jacobian in the exact-penalty regression.
    pub inject_penalty_sign_error: bool,
    /// Monte Carlo draws for the smoothed-penalty oracle.
    pub psi_draws: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tol: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} (tol {:.1e}){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tol,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" {}", self.detail)
            }
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Check> {
        self.checks.iter().filter(move |c| c.name.starts_with(prefix))
    }

    fn below(&mut self, name: impl Into<String>, value: f64, tol: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed: value <= tol,
            value,
            tol,
            detail: detail.into(),
        });
    }

    fn error(&mut self, name: impl Into<String>, err: impl fmt::Display) {
        self.checks.push(Check {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tol: f64::NAN,
            detail: format!("error: {err}"),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

struct Setup {
    spec: OcpSpec,
    theta: Theta,
}

fn setups(report: &mut VerifyReport) -> Vec<Setup> {
    let params = SystemParams::default();
    let mut out = Vec::new();
    for name in SYSTEM_NAMES {
        match make_system(name, &params) {
            Ok(spec) => match spec.theta_star.clone() {
                Some(theta) => out.push(Setup { spec, theta }),
                None => report.error(format!("setup/{name}"), "no reference weights"),
            },
            Err(e) => report.error(format!("setup/{name}"), e),
        }
    }
    out
}

/// Penalized solve with weights `rho` everywhere against the constrained optimum.
pub fn lemma_gap(spec: &OcpSpec, theta: &Theta, optimum: &Trajectory, rho: f64) -> iocrelax::Result<f64> {
    let w = DVector::from_element(spec.p() * spec.horizon, rho);
    let pen = solve_penalized_ocp(spec, theta, &w, None)?;
    Ok(pen.traj.max_abs_diff(optimum))
}

fn check_lemma(s: &Setup, report: &mut VerifyReport) {
    let name = &s.spec.name;
    let sol = match solve_ocp(&s.spec, &s.theta, None) {
        Ok(sol) => sol,
        Err(e) => return report.error(format!("lemma/{name}"), e),
    };
    let lam = sol.lambda.amax();
    match lemma_gap(&s.spec, &s.theta, &sol.traj, lam + 1.0) {
        Ok(gap) => report.below(
            format!("lemma/{name}"),
            gap,
            LEMMA_TOL,
            format!("rho = {:.4}", lam + 1.0),
        ),
        Err(e) => report.error(format!("lemma/{name}"), e),
    }
    if lam > 0.0 {
        let rho = 0.5 * lam;
        match lemma_gap(&s.spec, &s.theta, &sol.traj, rho) {
            Ok(gap) => report.checks.push(Check {
                name: format!("lemma-negative-control/{name}"),
                passed: gap > DIVERGENCE_MIN,
                value: gap,
                tol: DIVERGENCE_MIN,
                detail: format!("rho = {rho:.4} < max lambda; divergence expected"),
            }),
            Err(e) => report.error(format!("lemma-negative-control/{name}"), e),
        }
    }
}

/// Exact-penalty regression on `traj` assembled by hand, with the penalty
/// Jacobian multiplied by `sign`. Returns `(theta, rho)` with `rho` zero on
/// masked-out rows.
pub fn manual_exact_ep(
    spec: &OcpSpec,
    traj: &Trajectory,
    anchor: &Anchor,
    sign: f64,
) -> iocrelax::Result<(DVector<f64>, DVector<f64>, Vec<bool>)> {
    let jt = feature_sum_jacobian(spec, traj)?;
    let jv = dynamics_jacobian(spec, traj)?;
    let jr = penalty_jacobian(spec, traj, DEFAULT_ACTIVATION_TOL)?;
    let mask: Vec<bool> = (0..jr.ncols()).map(|j| jr.column(j).amax() > 0.0).collect();
    let kept: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    let rows = free_rows(spec);
    let (q, nn) = (jt.ncols(), jv.ncols());
    let mut a = DMatrix::zeros(rows.len(), q + nn + kept.len());
    a.view_mut((0, 0), (rows.len(), q))
        .copy_from(&jt.rows(rows.start, rows.len()));
    a.view_mut((0, q), (rows.len(), nn))
        .copy_from(&jv.rows(rows.start, rows.len()));
    for (c, &j) in kept.iter().enumerate() {
        let col = jr.view((rows.start, j), (rows.len(), 1)) * sign;
        a.view_mut((0, q + nn + c), (rows.len(), 1)).copy_from(&col);
    }
    let prob = ClsProblem::new(
        a,
        (q + nn..q + nn + kept.len()).collect(),
        (anchor.index(), anchor.value()),
    )?;
    let sol = solve_cls(&prob)?;
    let mut rho = DVector::zeros(mask.len());
    for (c, &j) in kept.iter().enumerate() {
        rho[j] = sol.beta[q + nn + c];
    }
    Ok((sol.beta.rows(0, q).into_owned(), rho, mask))
}

fn check_theorem(s: &Setup, opts: &VerifyOptions, report: &mut VerifyReport) {
    let name = &s.spec.name;
    let tag = format!("theorem/{name}");
    let run = || -> iocrelax::Result<(f64, f64, f64)> {
        let sol = solve_ocp(&s.spec, &s.theta, None)?;
        let anchor = Anchor::from_spec(&s.spec)?;
        let kkt = estimate_exact_kkt(&s.spec, &sol.traj, DEFAULT_ACTIVATION_TOL, &anchor)?;
        let sign = if opts.inject_penalty_sign_error { -1.0 } else { 1.0 };
        let (theta_ep, rho, mask) = manual_exact_ep(&s.spec, &sol.traj, &anchor, sign)?;
        let dtheta = (&kkt.theta.0 - &theta_ep).amax();
        let dmult = (0..mask.len())
            .filter(|&j| mask[j])
            .map(|j| (rho[j] - kkt.multipliers[j]).abs())
            .fold(0.0, f64::max);
        let lib = estimate_exact_ep(&s.spec, &sol.traj, &anchor)?;
        let dlib = (&lib.theta.0 - &kkt.theta.0).amax();
        Ok((dtheta, dmult, dlib))
    };
    match run() {
        Ok((dt, dm, dl)) => {
            report.below(format!("{tag}/theta"), dt, THEOREM_TOL, "");
            report.below(format!("{tag}/multipliers"), dm, THEOREM_TOL, "retained rho vs lambda");
            report.below(
                format!("{tag}/library"),
                dl,
                THEOREM_TOL,
                "library exact-penalty estimator",
            );
        }
        Err(e) => report.error(tag, e),
    }
}

/// Random trajectories around the optimum, seeded by system index.
pub fn random_trajectories(spec: &OcpSpec, center: &Trajectory, count: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z = center.to_z().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
            Trajectory::from_z(spec.n(), spec.m(), spec.horizon, &z).expect("same length")
        })
        .collect()
}

fn check_derivatives(idx: usize, s: &Setup, report: &mut VerifyReport) {
    let name = &s.spec.name;
    let center = match solve_ocp(&s.spec, &s.theta, None) {
        Ok(sol) => sol.traj,
        Err(e) => return report.error(format!("fd/{name}"), e),
    };
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let w: Vec<f64> = (0..s.spec.n()).map(|i| 1.0 + 0.5 * i as f64).collect();
    for traj in random_trajectories(&s.spec, &center, FD_TRAJECTORIES, 1000 + idx as u64) {
        match check_model_derivatives(&s.spec, &traj, s.theta.as_slice(), &w, FD_TOL) {
            Ok(reps) => {
                for (what, rep) in reps {
                    match worst.iter_mut().find(|(n, _)| *n == what) {
                        Some(e) => e.1 = e.1.max(rep.max_rel_dev),
                        None => worst.push((what, rep.max_rel_dev)),
                    }
                }
            }
            Err(e) => return report.error(format!("fd/{name}"), e),
        }
    }
    for (what, dev) in worst {
        report.below(
            format!("fd/{name}/{what}"),
            dev,
            FD_TOL,
            format!("{FD_TRAJECTORIES} trajectories"),
        );
    }
}

/// Antithetic Monte Carlo estimate of `E[max(0, mu + sigma Z)]` on the grid,
/// row-major in `(mu, sigma)`.
pub fn psi_monte_carlo(mus: &[f64], sigmas: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0_f64; mus.len() * sigmas.len()];
    let pairs = draws.div_ceil(2);
    for _ in 0..pairs {
        let z: f64 = rng.sample(StandardNormal);
        for (i, &mu) in mus.iter().enumerate() {
            for (j, &s) in sigmas.iter().enumerate() {
                acc[i * sigmas.len() + j] += (mu + s * z).max(0.0) + (mu - s * z).max(0.0);
            }
        }
    }
    acc.iter().map(|a| a / (2 * pairs) as f64).collect()
}

/// Largest `|psi - MC|` and largest `|psi_dmu - FD|` over the grid.
pub fn psi_deviations(draws: usize) -> iocrelax::Result<(f64, f64)> {
    let mc = psi_monte_carlo(&PSI_MU_GRID, &PSI_SIGMA_GRID, draws, 2024);
    let mut dev = 0.0_f64;
    let mut ddev = 0.0_f64;
    let h = 1e-6;
    for (i, &mu) in PSI_MU_GRID.iter().enumerate() {
        for (j, &s) in PSI_SIGMA_GRID.iter().enumerate() {
            dev = dev.max((psi(mu, s) - mc[i * PSI_SIGMA_GRID.len() + j]).abs());
            let fd = (psi(mu + h, s) - psi(mu - h, s)) / (2.0 * h);
            ddev = ddev.max((psi_dmu(mu, s)? - fd).abs());
        }
    }
    Ok((dev, ddev))
}

fn check_psi(opts: &VerifyOptions, report: &mut VerifyReport) {
    let draws = opts.psi_draws.unwrap_or(10_000_000);
    match psi_deviations(draws) {
        Ok((dev, ddev)) => {
            report.below("psi/monte-carlo", dev, PSI_MC_TOL, format!("{draws} draws, 9x5 grid"));
            report.below("psi/derivative", ddev, PSI_DMU_TOL, "central differences");
        }
        Err(e) => report.error("psi", e),
    }
}

/// Runs every check; never panics on a failing check, which is reported instead.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    let systems = setups(&mut report);
    for s in &systems {
        check_lemma(s, &mut report);
    }
    for s in &systems {
        check_theorem(s, opts, &mut report);
    }
    for (i, s) in systems.iter().enumerate() {
        check_derivatives(i, s, &mut report);
    }
    check_psi(opts, &mut report);
    report
}
