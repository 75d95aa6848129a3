//! Active-set solver for `min 0.5 y'My + q'y  s.t.  0 <= y <= ub`.
//!
//! Used on the dual of the SQP subproblem: plain inequality rows give
//! `ub = inf`, elastic (exact-penalty) rows give `ub = rho`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
    Free,
}

/// Dual values above this are treated as an unbounded dual, i.e. an
/// infeasible primal subproblem.
const DUAL_BLOWUP: f64 = 1e12;

pub fn solve_box_qp(m: &DMatrix<f64>, q: &DVector<f64>, ub: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = q.len();
    let mut y = DVector::zeros(dim);
    if dim == 0 {
        return Ok(y);
    }
    let mut state = vec![Bound::Lower; dim];
    for i in 0..dim {
        if ub[i] <= 0.0 {
            // fixed at zero either way
            state[i] = Bound::Lower;
        }
    }
    let scale = 1.0 + q.amax() + m.amax();
    let tol = 1e-13 * scale;

    for _ in 0..(20 * dim + 50) {
        let free: Vec<usize> = (0..dim).filter(|&i| state[i] == Bound::Free).collect();
        if !free.is_empty() {
            let target = solve_free(m, q, &y, &free)?;
            // step toward the subspace minimizer, stopping at the first bound
            let mut alpha = 1.0;
            let mut blocking = None;
            for (idx, &i) in free.iter().enumerate() {
                let d = target[idx] - y[i];
                if d < 0.0 && target[idx] < 0.0 {
                    let a = -y[i] / d;
                    if a < alpha {
                        alpha = a;
                        blocking = Some((i, Bound::Lower));
                    }
                } else if d > 0.0 && target[idx] > ub[i] {
                    let a = (ub[i] - y[i]) / d;
                    if a < alpha {
                        alpha = a;
                        blocking = Some((i, Bound::Upper));
                    }
                }
            }
            for (idx, &i) in free.iter().enumerate() {
                y[i] += alpha * (target[idx] - y[i]);
            }
            if let Some((i, b)) = blocking {
                y[i] = if b == Bound::Lower { 0.0 } else { ub[i] };
                state[i] = b;
                continue;
            }
        }
        if y.amax() > DUAL_BLOWUP * scale {
            return Err(Error::Infeasible(
                "linearized stage constraints cannot be satisfied".into(),
            ));
        }
        // release the bound variable with the most negative reduced gain
        let grad = m * &y + q;
        let mut release = None;
        let mut worst = tol;
        for i in 0..dim {
            let viol = match state[i] {
                Bound::Lower if ub[i] > 0.0 => -grad[i],
                Bound::Upper => grad[i],
                _ => continue,
            };
            if viol > worst {
                worst = viol;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = Bound::Free,
            None => return Ok(y),
        }
    }
    Err(Error::Infeasible("active-set QP did not terminate".into()))
}

/// Minimizer over the free coordinates with bound coordinates held fixed.
fn solve_free(m: &DMatrix<f64>, q: &DVector<f64>, y: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    let k = free.len();
    let mut mff = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            mff[(a, b)] = m[(i, j)];
        }
        let mut r = -q[i];
        for j in 0..q.len() {
            if !free.contains(&j) {
                r -= m[(i, j)] * y[j];
            }
        }
        rhs[a] = r;
    }
    if let Some(ch) = mff.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    let svd = mff.svd(true, true);
    let eps = 1e-14 * svd.singular_values.amax().max(1e-300);
    let sol = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Infeasible(format!("QP subspace solve failed: {e}")))?;
    // a singular direction that still reduces the objective means an unbounded dual
    if sol.amax() > DUAL_BLOWUP {
        return Err(Error::Infeasible(
            "linearized stage constraints cannot be satisfied".into(),
        ));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_interior_solution() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let q = DVector::from_vec(vec![-2.0, -4.0]);
        let ub = DVector::from_element(2, f64::INFINITY);
        let y = solve_box_qp(&m, &q, &ub).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-14 && (y[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bounds_bind() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_vec(vec![2.0, -6.0]);
        let ub = DVector::from_vec(vec![f64::INFINITY, 1.5]);
        let y = solve_box_qp(&m, &q, &ub).unwrap();
        // y0 at lower bound, y1 capped: unconstrained optimum of y1 alone is 3
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 1.5);
    }

    #[test]
    fn matches_brute_force_on_small_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let m = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let q = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let ub = DVector::from_vec(vec![f64::INFINITY, 0.7, 2.0]);
            let y = solve_box_qp(&m, &q, &ub).unwrap();
            let obj = |v: &DVector<f64>| 0.5 * v.dot(&(&m * v)) + q.dot(v);
            // projected gradient oracle
            let mut z = DVector::zeros(3);
            for _ in 0..20000 {
                let g = &m * &z + &q;
                z -= g * 0.05;
                for i in 0..3 {
                    z[i] = z[i].clamp(0.0, ub[i]);
                }
            }
            assert!((obj(&y) - obj(&z)).abs() < 1e-9, "{} vs {}", obj(&y), obj(&z));
        }
    }
}
