//! LU factorization with partial pivoting, split as `W = P·L·Λ·U`.

use crate::error::{Error, Result};

/// Factors of a square matrix with `L` unit lower triangular, `Λ` diagonal,
/// `U` unit upper triangular and `P` a row permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct LuFactors {
    /// `P` as an index map: row `perm[i]` of `W` is row `i` of `L·Λ·U`.
    pub perm: Vec<usize>,
    pub l: Vec<Vec<f64>>,
    pub diag: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

pub fn lu_decompose(w: &[Vec<f64>]) -> Result<LuFactors> {
    let n = w.len();
    if n == 0 || w.iter().any(|row| row.len() != n) {
        return Err(Error::Parameter("matrix must be square and non-empty".into()));
    }
    if w.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix has non-finite entries".into()));
    }
    let mut a: Vec<Vec<f64>> = w.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[p][col].abs() <= 1e-12 {
            return Err(Error::Parameter(format!("matrix is singular at column {col}")));
        }
        a.swap(col, p);
        perm.swap(col, p);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            a[i][col] = f;
            for j in col + 1..n {
                a[i][j] -= f * a[col][j];
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    let mut u = vec![vec![0.0; n]; n];
    let mut diag = vec![0.0; n];
    for i in 0..n {
        l[i][i] = 1.0;
        u[i][i] = 1.0;
        diag[i] = a[i][i];
        for j in 0..i {
            l[i][j] = a[i][j];
        }
        for j in i + 1..n {
            u[i][j] = a[i][j] / diag[i];
        }
    }
    Ok(LuFactors { perm, l, diag, u })
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `P·L·Λ·U` multiplied out.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut lu = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                lu[i][j] = (0..=i.min(j)).map(|m| self.l[i][m] * self.diag[m] * self.u[m][j]).sum();
            }
        }
        let mut w = vec![vec![0.0; n]; n];
        for i in 0..n {
            w[self.perm[i]] = lu[i].clone();
        }
        w
    }

    pub fn log_abs_det(&self) -> f64 {
        self.diag.iter().map(|d| d.abs().ln()).sum()
    }
}
