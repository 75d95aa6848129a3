//! Noisy demonstrations of an optimal trajectory.

mod io;

pub use io::{load_demoset, save_demoset, FORMAT_VERSION};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{OcpSpec, Theta, Trajectory};
use crate::solver::solve_ocp;

/// Recorded in dataset metadata so that `pct` can be interpreted later.
pub const NOISE_CONVENTION: &str = "input std = pct * |horizon mean of optimal input|";

/// Gaussian noise added to every stage `t_k = (x_k, u_k)` and to `x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// (n+m) x (n+m), shared by all stages.
    pub sigma_t: DMatrix<f64>,
    /// n x n.
    pub sigma_xn: DMatrix<f64>,
    pub seed: u64,
    /// Relative input noise level the covariances were built from, if any.
    pub pct: Option<f64>,
}

impl NoiseSpec {
    pub fn new(sigma_t: DMatrix<f64>, sigma_xn: DMatrix<f64>, seed: u64) -> Result<Self> {
        check_psd("stage covariance", &sigma_t)?;
        check_psd("terminal covariance", &sigma_xn)?;
        Ok(Self {
            sigma_t,
            sigma_xn,
            seed,
            pct: None,
        })
    }

    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            sigma_t: DMatrix::zeros(n + m, n + m),
            sigma_xn: DMatrix::zeros(n, n),
            seed: 0,
            pct: Some(0.0),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_t.iter().all(|&v| v == 0.0) && self.sigma_xn.iter().all(|&v| v == 0.0)
    }
}

fn check_psd(what: &str, s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::InvalidInput(format!("{what} is not square")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    let scale = 1.0 + s.amax();
    if (s - s.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    if s.nrows() > 0 && s.clone().symmetric_eigen().eigenvalues.min() < -1e-12 {
        return Err(Error::InvalidInput(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Symmetric square root `L` with `L L' = S`, negative roundoff eigenvalues clipped.
fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    if s.nrows() == 0 || s.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(s.nrows(), s.ncols());
    }
    let eig = s.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Input-only diagonal noise with per-channel std `pct * |mean_k u*_k|`.
pub fn make_noise_spec(spec: &OcpSpec, u_star: &DVector<f64>, pct: f64) -> Result<NoiseSpec> {
    let (n, m, horizon) = (spec.n(), spec.m(), spec.horizon);
    if !pct.is_finite() || pct < 0.0 {
        return Err(Error::InvalidInput(format!("noise level must be >= 0, got {pct}")));
    }
    if u_star.len() != m * horizon {
        return Err(Error::dim("optimal input sequence", m * horizon, u_star.len()));
    }
    let mut sigma_t = DMatrix::zeros(n + m, n + m);
    for j in 0..m {
        let mean = (0..horizon).map(|k| u_star[k * m + j]).sum::<f64>() / horizon as f64;
        let std = pct * mean.abs();
        sigma_t[(n + j, n + j)] = std * std;
    }
    Ok(NoiseSpec {
        sigma_t,
        sigma_xn: DMatrix::zeros(n, n),
        seed: 0,
        pct: Some(pct),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub theta: Theta,
    pub traj: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Trajectory>,
    pub spec_name: String,
    pub noise: NoiseSpec,
    pub truth: Option<Truth>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// `(n, m, N)` shared by all demonstrations.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.demos.first().map(|t| (t.n, t.m, t.horizon))
    }
}

/// Solves the forward problem at `theta_star` and perturbs the optimum `count` times.
pub fn generate_demoset(spec: &OcpSpec, theta_star: &Theta, noise: &NoiseSpec, count: usize) -> Result<DemoSet> {
    let sol = solve_ocp(spec, theta_star, None)?;
    generate_from_optimum(spec, theta_star, &sol.traj, noise, count)
}

/// As [`generate_demoset`], reusing a precomputed optimal trajectory.
pub fn generate_from_optimum(
    spec: &OcpSpec,
    theta_star: &Theta,
    optimum: &Trajectory,
    noise: &NoiseSpec,
    count: usize,
) -> Result<DemoSet> {
    spec.check_trajectory(optimum)?;
    let (n, m) = (spec.n(), spec.m());
    if count == 0 {
        return Err(Error::InvalidInput("at least one demonstration is required".into()));
    }
    if noise.sigma_t.nrows() != n + m {
        return Err(Error::dim("stage covariance", n + m, noise.sigma_t.nrows()));
    }
    if noise.sigma_xn.nrows() != n {
        return Err(Error::dim("terminal covariance", n, noise.sigma_xn.nrows()));
    }
    check_psd("stage covariance", &noise.sigma_t)?;
    check_psd("terminal covariance", &noise.sigma_xn)?;

    let l_t = psd_sqrt(&noise.sigma_t);
    let l_n = psd_sqrt(&noise.sigma_xn);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut draw = |dim: usize| DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));

    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        let mut t = optimum.t_vector();
        for k in 0..spec.horizon {
            let w = &l_t * draw(n + m);
            let mut rows = t.rows_mut(k * (n + m), n + m);
            rows += w;
        }
        let x_last = DVector::from_column_slice(optimum.state(spec.horizon)) + &l_n * draw(n);
        demos.push(Trajectory::from_t_vector(n, m, &t, x_last.as_slice())?);
    }
    Ok(DemoSet {
        demos,
        spec_name: spec.name.clone(),
        noise: noise.clone(),
        truth: Some(Truth {
            theta: theta_star.clone(),
            traj: optimum.clone(),
        }),
    })
}

/// Coordinatewise average of the demonstrations.
pub fn mean_trajectory(ds: &DemoSet) -> Result<Trajectory> {
    let first = ds
        .demos
        .first()
        .ok_or_else(|| Error::InvalidInput("empty demonstration set".into()))?;
    let mut mean = Trajectory::zeros(first.n, first.m, first.horizon);
    for d in &ds.demos {
        if (d.n, d.m, d.horizon) != (first.n, first.m, first.horizon) {
            return Err(Error::dim("demonstration length", first.x.len(), d.x.len()));
        }
        mean.x += &d.x;
        mean.u += &d.u;
    }
    let inv = 1.0 / ds.demos.len() as f64;
    mean.x *= inv;
    mean.u *= inv;
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_msd, SystemParams};

    #[test]
    fn noise_spec_rule() {
        let spec = make_msd(&SystemParams::default()).unwrap();
        let u = DVector::from_element(spec.horizon, 0.4);
        let ns = make_noise_spec(&spec, &u, 0.10).unwrap();
        assert!((ns.sigma_t[(2, 2)].sqrt() - 0.04).abs() < 1e-15);
        assert_eq!(ns.sigma_t[(0, 0)], 0.0);
        assert!(make_noise_spec(&spec, &u, 0.0).unwrap().is_zero());
        assert!(make_noise_spec(&spec, &u, -0.1).is_err());
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NoiseSpec::new(s, DMatrix::zeros(2, 2), 0).is_err());
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let l = psd_sqrt(&s);
        assert!((&l * l.transpose() - s).amax() < 1e-14);
    }
}
