use super::lu::{lu_decompose, LuFactors};
use super::scale::ChannelScale;
use super::{check_range, quant_dot, Tensor};
use crate::error::Result;
use crate::fixedq::Precision;
use crate::par::Exec;
use crate::ubcs::UniformCoder;

/// Invertible 1×1 convolution `z = W·x` at every position, applied through
/// the factors of `W = P·L·Λ·U`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1x1 {
    weight: Vec<Vec<f64>>,
    lu: LuFactors,
    diag: ChannelScale,
}

impl Conv1x1 {
    pub fn new(weight: Vec<Vec<f64>>) -> Result<Self> {
        let lu = lu_decompose(&weight)?;
        let diag = ChannelScale::signed(lu.diag.clone())?;
        Ok(Conv1x1 { weight, lu, diag })
    }

    pub fn weight(&self) -> &[Vec<f64>] {
        &self.weight
    }

    pub fn factors(&self) -> &LuFactors {
        &self.lu
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    /// Net bits per position, `Σ (log₂ S − log₂ R_c)` over the diagonal.
    pub fn codelength(&self, s: u64) -> Result<f64> {
        self.diag.codelength(s)
    }

    /// Apply `f` to every position's channel vector and write the results back.
    fn per_position<F>(t: &mut Tensor, exec: Exec, f: F) -> Result<()>
    where
        F: Fn(Vec<i64>) -> Result<Vec<i64>> + Sync + Send,
    {
        let (c, p) = (t.channels(), t.positions());
        let cols: Vec<Vec<i64>> = {
            let src: &Tensor = t;
            exec.map_range(p, |j| f(src.column(j))).into_iter().collect::<Result<_>>()?
        };
        let data = t.data_mut();
        for (j, col) in cols.into_iter().enumerate() {
            for i in 0..c {
                data[i * p + j] = col[i];
            }
        }
        Ok(())
    }

    pub(crate) fn forward<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        let n = self.dim();
        let lu = &self.lu;
        Self::per_position(t, exec, |x| {
            (0..n)
                .map(|i| check_range(x[i] + quant_dot(&lu.u[i][i + 1..], &x[i + 1..])?))
                .collect()
        })?;
        let p = t.positions();
        self.diag.apply_values(t.data_mut(), p, prec, aux, true)?;
        Self::per_position(t, exec, |y| {
            let mut z = vec![0; n];
            for i in 0..n {
                z[lu.perm[i]] = check_range(y[i] + quant_dot(&lu.l[i][..i], &y[..i])?)?;
            }
            Ok(z)
        })
    }

    pub(crate) fn inverse<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        let n = self.dim();
        let lu = &self.lu;
        Self::per_position(t, exec, |z| {
            let mut y = vec![0; n];
            for i in 0..n {
                y[i] = z[lu.perm[i]] - quant_dot(&lu.l[i][..i], &y[..i])?;
            }
            Ok(y)
        })?;
        let p = t.positions();
        self.diag.apply_values(t.data_mut(), p, prec, aux, false)?;
        Self::per_position(t, exec, |y| {
            let mut x = vec![0; n];
            for i in (0..n).rev() {
                x[i] = y[i] - quant_dot(&lu.u[i][i + 1..], &x[i + 1..])?;
            }
            Ok(x)
        })
    }

    pub(crate) fn continuous(&self, x: &mut [f64], positions: usize) -> f64 {
        let n = self.dim();
        for j in 0..positions {
            let col: Vec<f64> = (0..n).map(|i| x[i * positions + j]).collect();
            for i in 0..n {
                x[i * positions + j] = self.weight[i].iter().zip(&col).map(|(w, v)| w * v).sum();
            }
        }
        positions as f64 * self.lu.log_abs_det()
    }
}
