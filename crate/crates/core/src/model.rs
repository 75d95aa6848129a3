//! Optimal control problem data model.
//!
//! A problem is a horizon of `N` stages with decision variables ordered as
//! `(x_0, ..., x_N, u_0, ..., u_{N-1})`. Dynamics are stored in residual form
//! `r(x_{k+1}, x_k, u_k) = 0`, so explicit maps are the special case
//! `r = x_{k+1} - f(x_k, u_k)` and implicit integrators fit without change.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Partial derivatives of a stage residual `r(x_next, x, u)`.
#[derive(Debug, Clone)]
pub struct StageJacobian {
    /// `dr/dx_next`, n x n.
    pub next: DMatrix<f64>,
    /// `dr/dx`, n x n.
    pub state: DMatrix<f64>,
    /// `dr/du`, n x m.
    pub input: DMatrix<f64>,
}

/// Discrete dynamics in residual form.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn residual(&self, x_next: &[f64], x: &[f64], u: &[f64]) -> DVector<f64>;

    fn jacobian(&self, x_next: &[f64], x: &[f64], u: &[f64]) -> StageJacobian;

    /// `sum_i w[i] * hess(r_i)` with respect to the stacked `(x_next, x, u)`.
    fn weighted_hessian(&self, x_next: &[f64], x: &[f64], u: &[f64], w: &[f64]) -> DMatrix<f64>;

    /// Rejects points where the model is not defined (e.g. a tangent pole).
    fn check_stage(&self, _x_next: &[f64], _x: &[f64], _u: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Continuous-time vector field `xdot = f(x, u)`.
pub trait ContinuousDynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64]) -> DVector<f64>;
    /// `(df/dx, df/du)`.
    fn rhs_jacobian(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);
    /// `sum_i w[i] * hess(f_i)` with respect to `(x, u)`.
    fn rhs_weighted_hessian(&self, x: &[f64], u: &[f64], w: &[f64]) -> DMatrix<f64>;
    fn check(&self, _x: &[f64], _u: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Backward-Euler discretization with zero-order-hold input:
/// `r = x_next - x - dt * f(x_next, u)`.
#[derive(Debug, Clone)]
pub struct BackwardEuler<C> {
    pub model: C,
    pub dt: f64,
}

impl<C: ContinuousDynamics> BackwardEuler<C> {
    pub fn new(model: C, dt: f64) -> Self {
        Self { model, dt }
    }
}

impl<C: ContinuousDynamics> Dynamics for BackwardEuler<C> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn residual(&self, x_next: &[f64], x: &[f64], u: &[f64]) -> DVector<f64> {
        let f = self.model.rhs(x_next, u);
        DVector::from_iterator(x.len(), (0..x.len()).map(|i| x_next[i] - x[i] - self.dt * f[i]))
    }

    fn jacobian(&self, x_next: &[f64], x: &[f64], u: &[f64]) -> StageJacobian {
        let n = x.len();
        let (a, b) = self.model.rhs_jacobian(x_next, u);
        StageJacobian {
            next: DMatrix::identity(n, n) - a * self.dt,
            state: -DMatrix::identity(n, n),
            input: b * (-self.dt),
        }
    }

    fn weighted_hessian(&self, x_next: &[f64], x: &[f64], u: &[f64], w: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let m = u.len();
        let hc = self.model.rhs_weighted_hessian(x_next, u, w);
        let mut out = DMatrix::zeros(2 * n + m, 2 * n + m);
        // (x_next, u) blocks come from -dt * hess(f); x enters linearly.
        let map = |i: usize| if i < n { i } else { i + n };
        for i in 0..n + m {
            for j in 0..n + m {
                out[(map(i), map(j))] = -self.dt * hc[(i, j)];
            }
        }
        out
    }

    fn check_stage(&self, x_next: &[f64], _x: &[f64], u: &[f64]) -> std::result::Result<(), String> {
        self.model.check(x_next, u)
    }
}

/// Explicit linear map `x_next = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn residual(&self, x_next: &[f64], x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x_next)
            - &self.a * DVector::from_column_slice(x)
            - &self.b * DVector::from_column_slice(u)
    }

    fn jacobian(&self, _x_next: &[f64], x: &[f64], _u: &[f64]) -> StageJacobian {
        StageJacobian {
            next: DMatrix::identity(x.len(), x.len()),
            state: -self.a.clone(),
            input: -self.b.clone(),
        }
    }

    fn weighted_hessian(&self, _x_next: &[f64], x: &[f64], u: &[f64], _w: &[f64]) -> DMatrix<f64> {
        let k = 2 * x.len() + u.len();
        DMatrix::zeros(k, k)
    }
}

/// Stage features `phi(x, u)`, evaluated on the stacked `t = (x, u)`.
pub trait FeatureMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64]) -> DVector<f64>;
    /// q x (n + m).
    fn jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    /// `sum_i theta[i] * hess(phi_i)`, (n + m) square.
    fn weighted_hessian(&self, x: &[f64], u: &[f64], theta: &[f64]) -> DMatrix<f64>;
}

/// Features of the form `(t[index] - offset)^2`, one per term.
#[derive(Debug, Clone)]
pub struct QuadraticFeatures {
    terms: Vec<(usize, f64)>,
    width: usize,
}

impl QuadraticFeatures {
    /// `width` is `n + m`; each term is `(index into t, offset)`.
    pub fn new(width: usize, terms: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(i, _)) = terms.iter().find(|(i, _)| *i >= width) {
            return Err(Error::InvalidInput(format!(
                "feature index {i} out of range for stage width {width}"
            )));
        }
        Ok(Self { terms, width })
    }
}

impl FeatureMap for QuadraticFeatures {
    fn dim(&self) -> usize {
        self.terms.len()
    }

    fn eval(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let n = x.len();
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|&(i, c)| {
                let t = if i < n { x[i] } else { u[i - n] };
                (t - c) * (t - c)
            }),
        )
    }

    fn jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(self.terms.len(), self.width);
        for (row, &(i, c)) in self.terms.iter().enumerate() {
            let t = if i < n { x[i] } else { u[i - n] };
            j[(row, i)] = 2.0 * (t - c);
        }
        j
    }

    fn weighted_hessian(&self, _x: &[f64], _u: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.width, self.width);
        for (row, &(i, _)) in self.terms.iter().enumerate() {
            h[(i, i)] += 2.0 * theta[row];
        }
        h
    }
}

/// Objective weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta(pub DVector<f64>);

impl Theta {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("theta has non-finite entries".into()));
        }
        Ok(Theta(DVector::from_column_slice(values)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Polytopic stage constraint `H t_k - h <= 0`.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub h_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
}

impl Polytope {
    pub fn rows(&self) -> usize {
        self.h_mat.nrows()
    }

    /// No constraints for a stage of the given width.
    pub fn empty(width: usize) -> Self {
        Self {
            h_mat: DMatrix::zeros(0, width),
            h_vec: DVector::zeros(0),
        }
    }
}

/// Full description of a forward problem.
#[derive(Clone)]
pub struct OcpSpec {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub features: Arc<dyn FeatureMap>,
    pub constraints: Polytope,
    pub horizon: usize,
    pub x0: DVector<f64>,
    /// Sampling time in seconds.
    pub dt: f64,
    pub theta_star: Option<Theta>,
}

impl fmt::Debug for OcpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpSpec")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("q", &self.q())
            .field("p", &self.p())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl OcpSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics>,
        features: Arc<dyn FeatureMap>,
        constraints: Polytope,
        horizon: usize,
        x0: DVector<f64>,
        dt: f64,
        theta_star: Option<Theta>,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if x0.len() != n {
            return Err(Error::dim("initial state", n, x0.len()));
        }
        if constraints.h_mat.ncols() != n + m {
            return Err(Error::dim(
                "constraint matrix columns",
                n + m,
                constraints.h_mat.ncols(),
            ));
        }
        if constraints.h_vec.len() != constraints.h_mat.nrows() {
            return Err(Error::dim(
                "constraint offset",
                constraints.h_mat.nrows(),
                constraints.h_vec.len(),
            ));
        }
        let probe = features.eval(x0.as_slice(), &vec![0.0; m]);
        if probe.len() != features.dim() {
            return Err(Error::dim("feature output", features.dim(), probe.len()));
        }
        if let Some(t) = &theta_star {
            if t.len() != features.dim() {
                return Err(Error::dim("theta", features.dim(), t.len()));
            }
        }
        Ok(Self {
            name: name.into(),
            dynamics,
            features,
            constraints,
            horizon,
            x0,
            dt,
            theta_star,
        })
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn q(&self) -> usize {
        self.features.dim()
    }

    pub fn p(&self) -> usize {
        self.constraints.rows()
    }

    /// Number of decision variables `b = n(N+1) + mN`.
    pub fn num_vars(&self) -> usize {
        self.n() * (self.horizon + 1) + self.m() * self.horizon
    }

    /// Row of `x_k[i]` in the decision vector.
    pub fn state_index(&self, k: usize, i: usize) -> usize {
        k * self.n() + i
    }

    /// Row of `u_k[j]` in the decision vector.
    pub fn input_index(&self, k: usize, j: usize) -> usize {
        self.n() * (self.horizon + 1) + k * self.m() + j
    }

    /// Row of entry `i` of the stage vector `t_k = (x_k, u_k)`.
    pub fn stage_index(&self, k: usize, i: usize) -> usize {
        let n = self.n();
        if i < n {
            self.state_index(k, i)
        } else {
            self.input_index(k, i - n)
        }
    }

    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.n != self.n() {
            return Err(Error::dim("trajectory state dimension", self.n(), traj.n));
        }
        if traj.m != self.m() {
            return Err(Error::dim("trajectory input dimension", self.m(), traj.m));
        }
        if traj.horizon != self.horizon {
            return Err(Error::dim("trajectory horizon", self.horizon, traj.horizon));
        }
        Ok(())
    }

    /// Solves `r(x_next, x, u) = 0` for `x_next` by Newton's method starting at `x`.
    /// Returns the state and the number of iterations used.
    pub fn implicit_step(&self, stage: usize, x: &[f64], u: &[f64]) -> Result<(DVector<f64>, usize)> {
        implicit_step(self.dynamics.as_ref(), stage, x, u, 1e-10, 50)
    }

    /// Forward simulation of an input sequence from `x0`.
    pub fn rollout(&self, u: &DVector<f64>) -> Result<Trajectory> {
        let (n, m, big_n) = (self.n(), self.m(), self.horizon);
        if u.len() != m * big_n {
            return Err(Error::dim("input sequence", m * big_n, u.len()));
        }
        let mut x = DVector::zeros(n * (big_n + 1));
        x.rows_mut(0, n).copy_from(&self.x0);
        for k in 0..big_n {
            let xk: Vec<f64> = x.rows(k * n, n).iter().copied().collect();
            let (next, _) = self.implicit_step(k, &xk, &u.as_slice()[k * m..(k + 1) * m])?;
            x.rows_mut((k + 1) * n, n).copy_from(&next);
        }
        Trajectory::new(n, m, big_n, x, u.clone())
    }
}

/// Newton iteration for one implicit dynamics step.
pub fn implicit_step(
    dynamics: &dyn Dynamics,
    stage: usize,
    x: &[f64],
    u: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut next = DVector::from_column_slice(x);
    for it in 0..=max_iter {
        dynamics
            .check_stage(next.as_slice(), x, u)
            .map_err(|reason| Error::StageFailure { stage, reason })?;
        let r = dynamics.residual(next.as_slice(), x, u);
        let norm = r.amax();
        if !norm.is_finite() {
            return Err(Error::StageFailure {
                stage,
                reason: "non-finite dynamics residual".into(),
            });
        }
        if norm <= tol {
            return Ok((next, it));
        }
        if it == max_iter {
            return Err(Error::ImplicitStep { stage, residual: norm });
        }
        let jac = dynamics.jacobian(next.as_slice(), x, u);
        let step = jac.next.lu().solve(&r).ok_or(Error::Singular { stage })?;
        next -= step;
    }
    unreachable!()
}

/// State and input sequences of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// `(x_0, ..., x_N)`, length n(N+1).
    pub x: DVector<f64>,
    /// `(u_0, ..., u_{N-1})`, length mN.
    pub u: DVector<f64>,
}

impl Trajectory {
    pub fn new(n: usize, m: usize, horizon: usize, x: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        if x.len() != n * (horizon + 1) {
            return Err(Error::dim("state sequence", n * (horizon + 1), x.len()));
        }
        if u.len() != m * horizon {
            return Err(Error::dim("input sequence", m * horizon, u.len()));
        }
        Ok(Self { n, m, horizon, x, u })
    }

    pub fn zeros(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            n,
            m,
            horizon,
            x: DVector::zeros(n * (horizon + 1)),
            u: DVector::zeros(m * horizon),
        }
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.x.as_slice()[k * self.n..(k + 1) * self.n]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.u.as_slice()[k * self.m..(k + 1) * self.m]
    }

    /// `t_k = (x_k, u_k)` for `k < N`.
    pub fn stage(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(self.n + self.m, self.state(k).iter().chain(self.input(k)).copied())
    }

    /// Stacked `T = (t_0, ..., t_{N-1})`.
    pub fn t_vector(&self) -> DVector<f64> {
        let w = self.n + self.m;
        let mut t = DVector::zeros(w * self.horizon);
        for k in 0..self.horizon {
            t.rows_mut(k * w, w).copy_from(&self.stage(k));
        }
        t
    }

    /// Inverse of [`Trajectory::t_vector`]; `x_last` supplies `x_N`.
    pub fn from_t_vector(n: usize, m: usize, t: &DVector<f64>, x_last: &[f64]) -> Result<Self> {
        let w = n + m;
        if w == 0 || !t.len().is_multiple_of(w) {
            return Err(Error::InvalidInput(
                "stage vector length not a multiple of n + m".into(),
            ));
        }
        if x_last.len() != n {
            return Err(Error::dim("terminal state", n, x_last.len()));
        }
        let horizon = t.len() / w;
        let mut traj = Self::zeros(n, m, horizon);
        for k in 0..horizon {
            for i in 0..n {
                traj.x[k * n + i] = t[k * w + i];
            }
            for j in 0..m {
                traj.u[k * m + j] = t[k * w + n + j];
            }
        }
        traj.x.rows_mut(horizon * n, n).copy_from_slice(x_last);
        Ok(traj)
    }

    /// Decision vector `(X, U)`.
    pub fn to_z(&self) -> DVector<f64> {
        DVector::from_iterator(self.x.len() + self.u.len(), self.x.iter().chain(self.u.iter()).copied())
    }

    pub fn from_z(n: usize, m: usize, horizon: usize, z: &DVector<f64>) -> Result<Self> {
        let nx = n * (horizon + 1);
        if z.len() != nx + m * horizon {
            return Err(Error::dim("decision vector", nx + m * horizon, z.len()));
        }
        Ok(Self {
            n,
            m,
            horizon,
            x: z.rows(0, nx).into_owned(),
            u: z.rows(nx, m * horizon).into_owned(),
        })
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        (&self.x - &other.x).amax().max((&self.u - &other.u).amax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_vector_reindexes_states_and_inputs() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let u = DVector::from_vec(vec![7.0, 8.0]);
        let traj = Trajectory::new(2, 1, 2, x, u).unwrap();
        let t = traj.t_vector();
        assert_eq!(t.as_slice(), &[1.0, 2.0, 7.0, 3.0, 4.0, 8.0]);
        let back = Trajectory::from_t_vector(2, 1, &t, traj.state(2)).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn trajectory_rejects_wrong_lengths() {
        let err = Trajectory::new(2, 1, 2, DVector::zeros(5), DVector::zeros(2)).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                expected: 6,
                got: 5,
                ..
            }
        ));
    }

    #[test]
    fn linear_implicit_step_is_exact() {
        let dynamics = LinearDynamics {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
        };
        let (next, iters) = implicit_step(&dynamics, 0, &[1.0, 2.0], &[3.0], 1e-12, 5).unwrap();
        assert!((next[0] - 1.2).abs() < 1e-15);
        assert!((next[1] - 2.3).abs() < 1e-15);
        assert_eq!(iters, 1);
    }

    #[test]
    fn quadratic_features_gradient_vanishes_at_offset() {
        let phi = QuadraticFeatures::new(3, vec![(0, 3.0), (1, 0.0), (2, 0.0)]).unwrap();
        let j = phi.jacobian(&[3.0, 0.5], &[0.2]);
        assert_eq!(j[(0, 0)], 0.0);
        assert!((j[(1, 1)] - 1.0).abs() < 1e-15);
        assert!((j[(2, 2)] - 0.4).abs() < 1e-15);
        assert!(QuadraticFeatures::new(3, vec![(3, 0.0)]).is_err());
    }
}
