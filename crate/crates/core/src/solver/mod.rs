//! Forward optimal control solver.
//!
//! Direct transcription of all states and inputs, solved by SQP with an exact
//! Lagrangian Hessian. Each iteration eliminates the linearized dynamics
//! (states are an affine function of the inputs), leaving a dense QP over the
//! inputs whose stage-constraint rows are handled through their bound-constrained
//! dual. Exact-penalty rows are the same dual with an upper bound `rho`, which
//! is the slack reformulation `min rho's, s >= 0, s >= g` with the slack
//! multipliers eliminated. Globalization is an l1 merit line search with a
//! second-order correction on the dynamics.

mod qp;

pub use qp::solve_box_qp;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::jacobians::{self, free_rows};
use crate::model::{OcpSpec, Theta, Trajectory};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Target for the stationarity residual (infinity norm).
    pub tol: f64,
    /// Target for dynamics and constraint violation.
    pub feas_tol: f64,
    /// Unconstrained Newton steps applied to the default initial guess.
    pub warm_newton_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
            feas_tol: 1e-11,
            warm_newton_steps: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub traj: Trajectory,
    /// Dynamics multipliers, length nN.
    pub v: DVector<f64>,
    /// Stage-constraint multipliers, length pN; empty for penalized solves.
    pub lambda: DVector<f64>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Rows with `g >= -1e-8` (weakly active rows included).
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
enum Mode<'a> {
    Unconstrained,
    Constrained,
    Penalized(&'a DVector<f64>),
}

pub fn solve_ocp(spec: &OcpSpec, theta: &Theta, init: Option<&Trajectory>) -> Result<OcpSolution> {
    solve_ocp_with(spec, theta, init, &SolverOptions::default())
}

pub fn solve_ocp_with(
    spec: &OcpSpec,
    theta: &Theta,
    init: Option<&Trajectory>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    check_theta(spec, theta)?;
    let start = initial_guess(spec, theta, init, opts)?;
    let out = Sqp::new(spec, theta, Mode::Constrained, opts).run(start)?;
    let g = jacobians::constraint_values(spec, &out.traj)?;
    let viol = g.iter().fold(0.0_f64, |a, &x| a.max(x));
    if viol > 1e-8 {
        return Err(Error::Infeasible(format!(
            "stage constraints violated by {viol:e} at the solver's final iterate"
        )));
    }
    let sol = OcpSolution {
        objective: objective(spec, theta, &out.traj)?,
        active: g.iter().map(|&x| x >= -1e-8).collect(),
        kkt_residual: 0.0,
        traj: out.traj,
        v: out.v,
        lambda: out.lambda,
        iterations: out.iterations,
    };
    let kkt_residual = kkt_residual(spec, theta, &sol)?;
    Ok(OcpSolution { kkt_residual, ..sol })
}

/// Solves the exact-penalty problem `sum theta'phi + rho_k' g_max` with only the
/// dynamics kept as constraints.
pub fn solve_penalized_ocp(
    spec: &OcpSpec,
    theta: &Theta,
    rho: &DVector<f64>,
    init: Option<&Trajectory>,
) -> Result<OcpSolution> {
    check_theta(spec, theta)?;
    let opts = SolverOptions::default();
    let pn = spec.p() * spec.horizon;
    if rho.len() != pn {
        return Err(Error::dim("penalty weights", pn, rho.len()));
    }
    if rho.iter().any(|&r| r.is_nan() || r < 0.0) {
        return Err(Error::InvalidInput("penalty weights must be nonnegative".into()));
    }
    let start = initial_guess(spec, theta, init, &opts)?;
    let out = Sqp::new(spec, theta, Mode::Penalized(rho), &opts).run(start)?;
    let g = jacobians::constraint_values(spec, &out.traj)?;
    // subgradient multipliers must lie in rho * d max(0, g)
    for (i, (&gi, &li)) in g.iter().zip(out.lambda.iter()).enumerate() {
        let ok = if gi > 1e-9 {
            (li - rho[i]).abs() <= 1e-6
        } else if gi < -1e-9 {
            li.abs() <= 1e-6
        } else {
            li >= -1e-6 && li <= rho[i] + 1e-6
        };
        if !ok {
            return Err(Error::NotConverged {
                iterations: out.iterations,
                residual: f64::NAN,
                best: Box::new(out.traj),
            });
        }
    }
    let stat = stationarity(spec, theta, &out.traj, &out.v, &out.lambda)?;
    let objective = objective(spec, theta, &out.traj)? + rho.dot(&g.map(|x| x.max(0.0)));
    Ok(OcpSolution {
        objective,
        active: g.iter().map(|&x| x >= -1e-8).collect(),
        kkt_residual: stat.amax(),
        traj: out.traj,
        v: out.v,
        lambda: DVector::zeros(0),
        iterations: out.iterations,
    })
}

/// Infinity norm of `J_theta theta + J_v v + J_lambda lambda` over the rows
/// of all decision variables except the fixed initial state.
pub fn kkt_residual(spec: &OcpSpec, theta: &Theta, sol: &OcpSolution) -> Result<f64> {
    check_theta(spec, theta)?;
    let lambda = if sol.lambda.is_empty() {
        DVector::zeros(spec.p() * spec.horizon)
    } else {
        sol.lambda.clone()
    };
    Ok(stationarity(spec, theta, &sol.traj, &sol.v, &lambda)?.amax())
}

/// Stationarity vector on the free rows.
pub fn stationarity(
    spec: &OcpSpec,
    theta: &Theta,
    traj: &Trajectory,
    v: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let nn = spec.n() * spec.horizon;
    let pn = spec.p() * spec.horizon;
    if v.len() != nn {
        return Err(Error::dim("dynamics multipliers", nn, v.len()));
    }
    if lambda.len() != pn {
        return Err(Error::dim("constraint multipliers", pn, lambda.len()));
    }
    let full = jacobians::feature_sum_jacobian(spec, traj)? * &theta.0
        + jacobians::dynamics_jacobian(spec, traj)? * v
        + jacobians::constraint_jacobian(spec, traj)? * lambda;
    let rows = free_rows(spec);
    Ok(full.rows(rows.start, rows.len()).into_owned())
}

fn objective(spec: &OcpSpec, theta: &Theta, traj: &Trajectory) -> Result<f64> {
    Ok(theta.0.dot(&jacobians::feature_sums(spec, traj)?))
}

fn check_theta(spec: &OcpSpec, theta: &Theta) -> Result<()> {
    if theta.len() != spec.q() {
        return Err(Error::dim("theta", spec.q(), theta.len()));
    }
    if theta.0.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("theta has non-finite entries".into()));
    }
    Ok(())
}

/// Rollout with zero input refined by a few unconstrained Newton steps, or
/// the caller's trajectory.
fn initial_guess(spec: &OcpSpec, theta: &Theta, init: Option<&Trajectory>, opts: &SolverOptions) -> Result<Trajectory> {
    if let Some(t) = init {
        spec.check_trajectory(t)?;
        let mut t = t.clone();
        t.x.rows_mut(0, spec.n()).copy_from(&spec.x0);
        return Ok(t);
    }
    let rollout = spec.rollout(&DVector::zeros(spec.m() * spec.horizon))?;
    if opts.warm_newton_steps == 0 {
        return Ok(rollout);
    }
    let warm = SolverOptions {
        max_iter: opts.warm_newton_steps,
        ..opts.clone()
    };
    let sqp = Sqp::new(spec, theta, Mode::Unconstrained, &warm);
    match sqp.run(rollout.clone()) {
        Ok(out) => Ok(out.traj),
        Err(Error::NotConverged { best, .. }) => Ok(*best),
        Err(e) => Err(e),
    }
}

struct SqpOutput {
    traj: Trajectory,
    v: DVector<f64>,
    lambda: DVector<f64>,
    iterations: usize,
}

/// Quantities evaluated at one iterate, restricted to the free variables
/// `(x_1..x_N, u_0..u_{N-1})`.
struct Linearization {
    grad: DVector<f64>,
    /// Dynamics Jacobian, nN x nv.
    a: DMatrix<f64>,
    c: DVector<f64>,
    /// Constraint Jacobian, pN x nv.
    g_jac: DMatrix<f64>,
    g: DVector<f64>,
    f: f64,
}

struct Sqp<'a> {
    spec: &'a OcpSpec,
    theta: &'a Theta,
    mode: Mode<'a>,
    opts: &'a SolverOptions,
    n: usize,
    nx: usize,
    nu: usize,
    pn: usize,
}

impl<'a> Sqp<'a> {
    fn new(spec: &'a OcpSpec, theta: &'a Theta, mode: Mode<'a>, opts: &'a SolverOptions) -> Self {
        let n = spec.n();
        Self {
            spec,
            theta,
            mode,
            opts,
            n,
            nx: n * spec.horizon,
            nu: spec.m() * spec.horizon,
            pn: spec.p() * spec.horizon,
        }
    }

    fn nv(&self) -> usize {
        self.nx + self.nu
    }

    fn to_traj(&self, zv: &DVector<f64>) -> Trajectory {
        let spec = self.spec;
        let mut z = DVector::zeros(spec.num_vars());
        z.rows_mut(0, self.n).copy_from(&spec.x0);
        z.rows_mut(self.n, self.nv()).copy_from(zv);
        Trajectory::from_z(spec.n(), spec.m(), spec.horizon, &z).expect("consistent sizes")
    }

    fn pack(&self, traj: &Trajectory) -> DVector<f64> {
        let z = traj.to_z();
        z.rows(self.n, self.nv()).into_owned()
    }

    fn check_stages(&self, traj: &Trajectory) -> Result<()> {
        for k in 0..self.spec.horizon {
            self.spec
                .dynamics
                .check_stage(traj.state(k + 1), traj.state(k), traj.input(k))
                .map_err(|reason| Error::StageFailure { stage: k, reason })?;
        }
        Ok(())
    }

    fn linearize(&self, traj: &Trajectory) -> Result<Linearization> {
        let spec = self.spec;
        self.check_stages(traj)?;
        let rows = free_rows(spec);
        let grad_full = jacobians::feature_sum_jacobian(spec, traj)? * &self.theta.0;
        let a_full = jacobians::dynamics_jacobian(spec, traj)?;
        let g_full = jacobians::constraint_jacobian(spec, traj)?;
        let c = jacobians::dynamics_residuals(spec, traj)?;
        let g = jacobians::constraint_values(spec, traj)?;
        let f = objective(spec, self.theta, traj)?;
        let lin = Linearization {
            grad: grad_full.rows(rows.start, rows.len()).into_owned(),
            a: a_full.rows(rows.start, rows.len()).transpose(),
            c,
            g_jac: g_full.rows(rows.start, rows.len()).transpose(),
            g,
            f,
        };
        if !lin.f.is_finite() || lin.c.iter().any(|x| !x.is_finite()) || lin.grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::StageFailure {
                stage: 0,
                reason: "non-finite objective or dynamics at iterate".into(),
            });
        }
        Ok(lin)
    }

    /// Lagrangian Hessian over the free variables.
    fn hessian(&self, traj: &Trajectory, v: &DVector<f64>) -> DMatrix<f64> {
        let spec = self.spec;
        let (n, m) = (spec.n(), spec.m());
        let b = spec.num_vars();
        let mut w = DMatrix::zeros(b, b);
        for k in 0..spec.horizon {
            let hf = spec
                .features
                .weighted_hessian(traj.state(k), traj.input(k), self.theta.as_slice());
            for i in 0..n + m {
                for j in 0..n + m {
                    w[(spec.stage_index(k, i), spec.stage_index(k, j))] += hf[(i, j)];
                }
            }
            let vk = &v.as_slice()[k * n..(k + 1) * n];
            if vk.iter().all(|&x| x == 0.0) {
                continue;
            }
            let hd = spec
                .dynamics
                .weighted_hessian(traj.state(k + 1), traj.state(k), traj.input(k), vk);
            let idx = |i: usize| {
                if i < n {
                    spec.state_index(k + 1, i)
                } else if i < 2 * n {
                    spec.state_index(k, i - n)
                } else {
                    spec.input_index(k, i - 2 * n)
                }
            };
            for i in 0..2 * n + m {
                for j in 0..2 * n + m {
                    w[(idx(i), idx(j))] += hd[(i, j)];
                }
            }
        }
        w.view((n, n), (self.nv(), self.nv())).into_owned()
    }

    fn merit(&self, lin: &Linearization, mu: f64, mu_g: f64) -> f64 {
        let dyn_pen = mu * lin.c.lp_norm(1);
        let ineq = match self.mode {
            Mode::Unconstrained => 0.0,
            Mode::Constrained => mu_g * lin.g.iter().map(|x| x.max(0.0)).sum::<f64>(),
            Mode::Penalized(rho) => lin.g.iter().zip(rho.iter()).map(|(g, r)| r * g.max(0.0)).sum(),
        };
        lin.f + dyn_pen + ineq
    }

    /// Directional derivative of the merit function along `d`.
    fn merit_slope(&self, lin: &Linearization, d: &DVector<f64>, mu: f64, mu_g: f64) -> f64 {
        let gd = &lin.g_jac * d;
        let weight = |i: usize| match self.mode {
            Mode::Unconstrained => 0.0,
            Mode::Constrained => mu_g,
            Mode::Penalized(rho) => rho[i],
        };
        let mut s = lin.grad.dot(d) - mu * lin.c.lp_norm(1);
        for i in 0..lin.g.len() {
            let gi = lin.g[i];
            let slope = if gi > 0.0 {
                gd[i]
            } else if gi == 0.0 {
                gd[i].max(0.0)
            } else {
                0.0
            };
            s += weight(i) * slope;
        }
        s
    }

    fn run(&self, start: Trajectory) -> Result<SqpOutput> {
        let mut zv = self.pack(&start);
        let mut traj = self.to_traj(&zv);
        let mut v = DVector::zeros(self.nx);
        let mut lambda = DVector::zeros(self.pn);
        let (mut mu, mut mu_g) = (1.0_f64, 1.0_f64);
        let mut last_stat = f64::INFINITY;

        for it in 0..=self.opts.max_iter {
            let lin = self.linearize(&traj)?;
            let stat = (&lin.grad + lin.a.transpose() * &v + lin.g_jac.transpose() * &lambda).amax();
            let feas = lin.c.amax();
            let ineq_viol = match self.mode {
                Mode::Constrained => lin.g.iter().fold(0.0_f64, |a, &x| a.max(x)),
                _ => 0.0,
            };
            last_stat = stat;
            if it > 0 && stat <= self.opts.tol && feas <= self.opts.feas_tol && ineq_viol <= self.opts.feas_tol {
                return Ok(SqpOutput {
                    traj,
                    v,
                    lambda,
                    iterations: it,
                });
            }
            if it == self.opts.max_iter {
                break;
            }

            let step = self.qp_step(&traj, &lin, &v)?;
            // converged to roundoff: the step no longer changes the iterate
            let step_size = step.d.amax();
            if step_size <= 1e-14 * (1.0 + zv.amax()) && stat <= 1e-8 && feas <= 1e-10 {
                return Ok(SqpOutput {
                    traj,
                    v: step.v,
                    lambda: step.lambda,
                    iterations: it + 1,
                });
            }

            mu = mu.max(2.0 * step.v.amax() + 1.0);
            mu_g = mu_g.max(2.0 * step.lambda.amax() + 1.0);
            let phi0 = self.merit(&lin, mu, mu_g);
            let slope = self.merit_slope(&lin, &step.d, mu, mu_g).min(0.0);

            let mut accepted = None;
            if step_size <= 1e-9 * (1.0 + zv.amax()) {
                accepted = Some(&zv + &step.d);
            } else {
                let mut alpha = 1.0;
                for _ in 0..40 {
                    let cand = &zv + &step.d * alpha;
                    if let Some(phi) = self.try_merit(&cand, mu, mu_g) {
                        if phi <= phi0 + 1e-4 * alpha * slope {
                            accepted = Some(cand);
                            break;
                        }
                    }
                    if alpha == 1.0 {
                        if let Some(cand) = self.second_order_correction(&zv, &step) {
                            if let Some(phi) = self.try_merit(&cand, mu, mu_g) {
                                if phi <= phi0 + 1e-4 * slope {
                                    accepted = Some(cand);
                                    break;
                                }
                            }
                        }
                    }
                    alpha *= 0.5;
                }
            }
            let Some(next) = accepted else {
                break;
            };
            zv = next;
            traj = self.to_traj(&zv);
            v = step.v;
            lambda = step.lambda;
        }
        Err(Error::NotConverged {
            iterations: self.opts.max_iter,
            residual: last_stat,
            best: Box::new(traj),
        })
    }

    fn try_merit(&self, zv: &DVector<f64>, mu: f64, mu_g: f64) -> Option<f64> {
        let traj = self.to_traj(zv);
        self.check_stages(&traj).ok()?;
        let c = jacobians::dynamics_residuals(self.spec, &traj).ok()?;
        let g = jacobians::constraint_values(self.spec, &traj).ok()?;
        let f = objective(self.spec, self.theta, &traj).ok()?;
        let lin = Linearization {
            grad: DVector::zeros(0),
            a: DMatrix::zeros(0, 0),
            c,
            g_jac: DMatrix::zeros(0, 0),
            g,
            f,
        };
        let phi = self.merit(&lin, mu, mu_g);
        phi.is_finite().then_some(phi)
    }

    /// Full step plus a state correction that re-solves the linearized
    /// dynamics at the trial point.
    fn second_order_correction(&self, zv: &DVector<f64>, step: &QpStep) -> Option<DVector<f64>> {
        let trial = zv + &step.d;
        let traj = self.to_traj(&trial);
        let c = jacobians::dynamics_residuals(self.spec, &traj).ok()?;
        let dx = step.ax_lu.solve(&c)?;
        let mut out = trial;
        for i in 0..self.nx {
            out[i] -= dx[i];
        }
        Some(out)
    }

    fn qp_step(&self, traj: &Trajectory, lin: &Linearization, v: &DVector<f64>) -> Result<QpStep> {
        let (nx, nu) = (self.nx, self.nu);
        let n = self.n;
        for k in 0..self.spec.horizon {
            let block = lin.a.view((k * n, k * n), (n, n)).into_owned();
            if block.lu().determinant().abs() < 1e-14 {
                return Err(Error::Singular { stage: k });
            }
        }
        let a_x = lin.a.columns(0, nx).into_owned();
        let a_u = lin.a.columns(nx, nu).into_owned();
        let ax_lu = a_x.clone().lu();
        let z_x = -ax_lu.solve(&a_u).ok_or(Error::Singular { stage: 0 })?;
        let dp_x = -ax_lu.solve(&lin.c).ok_or(Error::Singular { stage: 0 })?;

        let mut z = DMatrix::zeros(self.nv(), nu);
        z.view_mut((0, 0), (nx, nu)).copy_from(&z_x);
        z.view_mut((nx, 0), (nu, nu)).fill_with_identity();
        let mut d_p = DVector::zeros(self.nv());
        d_p.rows_mut(0, nx).copy_from(&dp_x);

        // Lagrangian Hessian when its reduced form is positive definite,
        // otherwise the objective Hessian, which is convex for the
        // quadratic features used here.
        let w_full = self.hessian(traj, v);
        let r_full = z.transpose() * &w_full * &z;
        let (w, chol, regularized) = match pd_cholesky(&r_full) {
            Some(ch) => (w_full.clone(), ch, false),
            None => {
                let w_obj = self.hessian(traj, &DVector::zeros(self.nx));
                let ch = regularized_cholesky(z.transpose() * &w_obj * &z)?;
                (w_obj, ch, true)
            }
        };
        let g_r = z.transpose() * (&lin.grad + &w * &d_p);

        let mut rhs = g_r.clone();
        let mut exact = None;
        let lambda = if matches!(self.mode, Mode::Unconstrained) || self.pn == 0 {
            DVector::zeros(self.pn)
        } else {
            let c = &lin.g_jac * &z;
            let e = -&lin.g - &lin.g_jac * &d_p;
            let rinv_ct = chol.solve(&c.transpose());
            let m = &c * &rinv_ct;
            let q = rinv_ct.transpose() * &g_r + &e;
            let ub = match self.mode {
                Mode::Penalized(rho) => rho.clone(),
                _ => DVector::from_element(self.pn, f64::INFINITY),
            };
            let lam = solve_box_qp(&(0.5 * (&m + m.transpose())), &q, &ub)?;
            if regularized {
                let g_full = z.transpose() * (&lin.grad + &w_full * &d_p);
                exact = active_set_step(&r_full, &c, &e, &g_full, &lam, &ub);
            }
            rhs += c.transpose() * &lam;
            if matches!(self.mode, Mode::Constrained) {
                let d_u = -chol.solve(&rhs);
                let slack = &e - &c * &d_u;
                let worst = slack.iter().fold(0.0_f64, |a, &s| a.min(s));
                if worst < -1e-8 * (1.0 + e.amax()) {
                    return Err(Error::Infeasible(format!(
                        "linearized stage constraints violated by {:e}",
                        -worst
                    )));
                }
            }
            lam
        };
        let (d_u, lambda, w) = match exact {
            Some((d_u, lam)) => (d_u, lam, w_full),
            None => (-chol.solve(&rhs), lambda, w),
        };
        let d = &z * &d_u + &d_p;
        let rhs_v = -(&w * &d + &lin.grad + lin.g_jac.transpose() * &lambda);
        let v_new = a_x
            .transpose()
            .lu()
            .solve(&rhs_v.rows(0, nx).into_owned())
            .ok_or(Error::Singular { stage: 0 })?;
        Ok(QpStep {
            d,
            v: v_new,
            lambda,
            ax_lu,
        })
    }
}

struct QpStep {
    d: DVector<f64>,
    v: DVector<f64>,
    lambda: DVector<f64>,
    ax_lu: nalgebra::LU<f64, Dyn, Dyn>,
}

/// Equality-constrained step on the active set identified by `lam`, using
/// the unregularized reduced Hessian `r`. Rows with `lam` strictly inside
/// `(0, ub)` are held tight, rows at `ub` keep their multiplier. Returns
/// `None` unless the KKT matrix has the inertia of a strict local minimizer
/// and the remaining rows stay on their side.
fn active_set_step(
    r: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: &DVector<f64>,
    g_r: &DVector<f64>,
    lam: &DVector<f64>,
    ub: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nu = r.nrows();
    let tol = 1e-9 * (1.0 + lam.amax());
    let mut eq = Vec::new();
    let mut fixed = DVector::zeros(lam.len());
    for i in 0..lam.len() {
        if lam[i] > tol && lam[i] < ub[i] - tol {
            eq.push(i);
        } else if lam[i] >= ub[i] - tol {
            fixed[i] = ub[i];
        }
    }
    let k = eq.len();
    let mut kkt = DMatrix::zeros(nu + k, nu + k);
    kkt.view_mut((0, 0), (nu, nu)).copy_from(&(0.5 * (r + r.transpose())));
    for (a, &i) in eq.iter().enumerate() {
        for j in 0..nu {
            kkt[(nu + a, j)] = c[(i, j)];
            kkt[(j, nu + a)] = c[(i, j)];
        }
    }
    let eig = kkt.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let pos = eig.eigenvalues.iter().filter(|&&l| l > 1e-10 * scale).count();
    let neg = eig.eigenvalues.iter().filter(|&&l| l < -1e-10 * scale).count();
    if pos != nu || neg != k {
        return None;
    }
    let mut rhs = DVector::zeros(nu + k);
    rhs.rows_mut(0, nu).copy_from(&-(g_r + c.transpose() * &fixed));
    for (a, &i) in eq.iter().enumerate() {
        rhs[nu + a] = e[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let d_u = sol.rows(0, nu).into_owned();
    let mut out = fixed;
    for (a, &i) in eq.iter().enumerate() {
        let mu = sol[nu + a];
        if mu < -tol || mu > ub[i] + tol {
            return None;
        }
        out[i] = mu.clamp(0.0, ub[i]);
    }
    let cd = c * &d_u;
    let slack_tol = 1e-10 * (1.0 + e.amax());
    for i in 0..lam.len() {
        if eq.contains(&i) {
            continue;
        }
        let bad = if out[i] > 0.0 {
            cd[i] < e[i] - slack_tol
        } else {
            cd[i] > e[i] + slack_tol
        };
        if bad {
            return None;
        }
    }
    Some((d_u, out))
}

/// Cholesky factor if every eigenvalue clears a relative floor.
fn pd_cholesky(r: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let r = 0.5 * (r + r.transpose());
    let eig = r.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1e-12);
    if eig.eigenvalues.iter().all(|&l| l >= 1e-8 * top) {
        r.cholesky()
    } else {
        None
    }
}

/// Cholesky of the reduced Hessian after lifting eigenvalues that are
/// negative or too small.
fn regularized_cholesky(r: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = pd_cholesky(&r) {
        return Ok(ch);
    }
    let r = 0.5 * (&r + r.transpose());
    let eig = r.symmetric_eigen();
    let floor = 1e-8 * eig.eigenvalues.amax().max(1e-12);
    let lifted = eig.eigenvalues.map(|l| l.abs().max(floor));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    let fixed = 0.5 * (&fixed + fixed.transpose());
    fixed
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("reduced Hessian could not be regularized".into()))
}
