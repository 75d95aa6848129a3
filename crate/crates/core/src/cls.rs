//! Anchored least squares with partial nonnegativity:
//!
//! ```text
//! min ||A beta||^2   s.t.   beta[a] = c,   beta[j] >= 0 for j in S
//! ```
//!
//! The anchor is substituted out, the unconstrained block is projected away,
//! and the remaining nonnegative block is solved with Lawson-Hanson NNLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClsProblem {
    pub a: DMatrix<f64>,
    pub nonneg: Vec<usize>,
    pub anchor: (usize, f64),
}

#[derive(Debug, Clone)]
pub struct ClsSolution {
    pub beta: DVector<f64>,
    /// `||A beta||`.
    pub residual_norm: f64,
    /// `true` for nonnegative coordinates that ended strictly positive.
    pub positive: Vec<bool>,
    /// The unconstrained block has dependent columns; `beta` on it is the
    /// minimum-norm choice.
    pub rank_deficient: bool,
    /// Largest violation of the first-order optimality conditions, relative
    /// to `||A||_F * max(1, ||A beta||)`.
    pub optimality_violation: f64,
}

impl ClsProblem {
    pub fn new(a: DMatrix<f64>, nonneg: Vec<usize>, anchor: (usize, f64)) -> Result<Self> {
        let p = Self { a, nonneg, anchor };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let z = self.a.ncols();
        let (idx, c) = self.anchor;
        if idx >= z {
            return Err(Error::InvalidInput(format!(
                "anchor index {idx} out of range for {z} columns"
            )));
        }
        if c == 0.0 || !c.is_finite() {
            return Err(Error::InvalidInput("anchor value must be finite and nonzero".into()));
        }
        let mut seen = vec![false; z];
        for &j in &self.nonneg {
            if j >= z {
                return Err(Error::InvalidInput(format!("nonnegative index {j} out of range")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidInput(format!("nonnegative index {j} listed twice")));
            }
        }
        if seen[idx] && c < 0.0 {
            return Err(Error::InvalidInput(
                "anchor value violates its own sign constraint".into(),
            ));
        }
        for (i, row) in self.a.row_iter().enumerate() {
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col });
            }
        }
        Ok(())
    }
}

pub fn solve_cls(prob: &ClsProblem) -> Result<ClsSolution> {
    prob.validate()?;
    let a = &prob.a;
    let z = a.ncols();
    let (anchor, c) = prob.anchor;
    let mut in_s = vec![false; z];
    for &j in &prob.nonneg {
        in_s[j] = true;
    }
    let free: Vec<usize> = (0..z).filter(|&j| j != anchor && !in_s[j]).collect();
    let cons: Vec<usize> = (0..z).filter(|&j| j != anchor && in_s[j]).collect();

    let y = -a.column(anchor) * c;
    let a_f = select_columns(a, &free);
    let a_s = select_columns(a, &cons);

    // orthonormal basis of range(A_F)
    let basis = range_basis(&a_f);
    let rank_deficient = basis.ncols() < free.len();
    let project = |m: &DMatrix<f64>| -> DMatrix<f64> {
        if basis.ncols() == 0 {
            m.clone()
        } else {
            m - &basis * (basis.transpose() * m)
        }
    };
    let b = project(&a_s);
    let yp = project(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))
        .column(0)
        .into_owned();

    let beta_s = nnls(&b, &yp);
    let rest = &y - &a_s * &beta_s;
    let beta_f = if free.is_empty() {
        DVector::zeros(0)
    } else {
        min_norm_solve(&a_f, &rest)
    };

    let mut beta = DVector::zeros(z);
    beta[anchor] = c;
    for (i, &j) in free.iter().enumerate() {
        beta[j] = beta_f[i];
    }
    for (i, &j) in cons.iter().enumerate() {
        beta[j] = beta_s[i];
    }
    let r = a * &beta;
    let residual_norm = r.norm();
    let grad = a.transpose() * &r;
    let scale = a.norm().max(1e-300) * residual_norm.max(1.0);
    let mut worst = 0.0_f64;
    for j in (0..z).filter(|&j| j != anchor) {
        let v = if in_s[j] {
            if beta[j] > 0.0 {
                grad[j].abs()
            } else {
                (-grad[j]).max(0.0)
            }
        } else {
            grad[j].abs()
        };
        worst = worst.max(v / scale);
    }
    Ok(ClsSolution {
        positive: (0..z).map(|j| in_s[j] && beta[j] > 0.0).collect(),
        beta,
        residual_norm,
        rank_deficient,
        optimality_violation: worst,
    })
}

fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

fn rank_tol(sv: &DVector<f64>, rows: usize, cols: usize) -> f64 {
    sv.amax() * f64::EPSILON * rows.max(cols) as f64 * 10.0
}

fn range_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let tol = rank_tol(&svd.singular_values, a.nrows(), a.ncols());
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    select_columns(&u, &keep)
}

/// Minimum-norm least-squares solution of `a x = y`.
fn min_norm_solve(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let tol = rank_tol(&svd.singular_values, a.nrows(), a.ncols());
    svd.solve(y, tol).expect("U and V were computed")
}

/// Lawson-Hanson NNLS: `min ||B x - y||, x >= 0`. Ties go to the lowest index.
fn nnls(b: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = b.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let tol = 1e-12 * b.norm().max(1e-300) * y.norm().max(1.0);
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];

    for _ in 0..3 * n + 10 {
        let w = b.transpose() * (y - b * &x);
        let mut pick = None;
        let mut best = tol;
        for j in 0..n {
            if !passive[j] && !excluded[j] && w[j] > best {
                best = w[j];
                pick = Some(j);
            }
        }
        let Some(j) = pick else {
            break;
        };
        passive[j] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let s_p = min_norm_solve(&select_columns(b, &idx), y);
            let mut s = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                s[i] = s_p[k];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            if first && s[j] <= 0.0 {
                // numerically the new index cannot help; keep it out
                passive[j] = false;
                excluded[j] = true;
                break;
            }
            first = false;
            let mut alpha = 1.0_f64;
            for &i in &idx {
                if s[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s[i]));
                }
            }
            for &i in &idx {
                x[i] += alpha * (s[i] - x[i]);
                if x[i] <= 1e-15 * (1.0 + x.amax()) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        if passive[j] {
            // the iterate moved, so earlier exclusions may be worth retrying
            excluded.iter_mut().for_each(|e| *e = false);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_anchor() {
        let p = ClsProblem::new(DMatrix::identity(3, 3), vec![], (0, 1.0)).unwrap();
        let s = solve_cls(&p).unwrap();
        assert_eq!(s.beta[0], 1.0);
        assert!(s.beta[1].abs() < 1e-15 && s.beta[2].abs() < 1e-15);
        assert!((s.residual_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_fit_with_sign_constraint() {
        let p = ClsProblem::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), vec![1], (0, 1.0)).unwrap();
        let s = solve_cls(&p).unwrap();
        assert!((s.beta[1] - 1.0).abs() < 1e-14);
        assert!(s.residual_norm < 1e-14);
    }

    #[test]
    fn nonnegativity_binds() {
        let p = ClsProblem::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![1], (0, 1.0)).unwrap();
        let s = solve_cls(&p).unwrap();
        assert_eq!(s.beta[1], 0.0);
        assert!((s.residual_norm - 1.0).abs() < 1e-15);
        assert!(!s.positive[1]);
    }

    #[test]
    fn invalid_problems() {
        let a = DMatrix::identity(2, 2);
        assert!(ClsProblem::new(a.clone(), vec![], (2, 1.0)).is_err());
        assert!(ClsProblem::new(a.clone(), vec![], (0, 0.0)).is_err());
        assert!(ClsProblem::new(a.clone(), vec![0], (0, -1.0)).is_err());
        assert!(ClsProblem::new(a, vec![1, 1], (0, 1.0)).is_err());
    }

    #[test]
    fn rank_deficient_free_block_is_flagged() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 2.0, 2.0]);
        let s = solve_cls(&ClsProblem::new(a, vec![], (0, 1.0)).unwrap()).unwrap();
        assert!(s.rank_deficient);
        // minimum norm splits the duplicated column evenly
        assert!((s.beta[1] - s.beta[2]).abs() < 1e-12);
    }
}
