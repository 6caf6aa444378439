use super::Tensor;
use crate::error::{Error, Result};
use crate::fixedq::Precision;
use crate::mst::{mst_forward_batch, mst_inverse_batch, RationalScale};
use crate::ubcs::UniformCoder;

/// Per-channel multiplication `z_c = λ_c·x_c`, realized with one MST per
/// element.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScale {
    lambdas: Vec<f64>,
}

impl ChannelScale {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Parameter("channel scale needs at least one factor".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Parameter(format!("scale factor {l} is not positive")));
        }
        Ok(ChannelScale { lambdas })
    }

    /// Factors of either sign; negative ones flip the output.
    pub(crate) fn signed(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l != 0.0)) {
            return Err(Error::Parameter(format!("scale factor {l} is not usable")));
        }
        Ok(ChannelScale { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn scales(&self, s: u64) -> Result<Vec<RationalScale>> {
        self.lambdas
            .iter()
            .map(|l| RationalScale::approximate(l.abs(), s))
            .collect()
    }

    /// Net bits per position, `Σ_c (log₂ S − log₂ R_c)`.
    pub fn codelength(&self, s: u64) -> Result<f64> {
        Ok(self.scales(s)?.iter().map(|r| r.codelength()).sum())
    }

    pub(crate) fn apply_values<C: UniformCoder>(
        &self,
        data: &mut [i64],
        positions: usize,
        prec: &Precision,
        aux: &mut C,
        forward: bool,
    ) -> Result<()> {
        let scales = self.scales(prec.s)?;
        let n = data.len();
        let b = prec.b as usize;
        let groups: Vec<usize> = if forward { (0..b).collect() } else { (0..b).rev().collect() };
        for g in groups {
            let idx: Vec<usize> = prec.split_indices(g, n).collect();
            if idx.is_empty() {
                continue;
            }
            let rs: Vec<u64> = idx.iter().map(|&i| scales[i / positions].r()).collect();
            let neg = |i: usize| self.lambdas[i / positions] < 0.0;
            let vals: Vec<i64> = idx
                .iter()
                .map(|&i| if !forward && neg(i) { -data[i] } else { data[i] })
                .collect();
            let mut out = vec![0; idx.len()];
            if forward {
                mst_forward_batch(&vals, &rs, prec.s, aux, &mut out)?;
            } else {
                mst_inverse_batch(&vals, &rs, prec.s, aux, &mut out)?;
            }
            for (&i, v) in idx.iter().zip(out) {
                data[i] = if forward && neg(i) { -v } else { v };
            }
        }
        Ok(())
    }

    pub(crate) fn apply<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, forward: bool) -> Result<()> {
        let p = t.positions();
        self.apply_values(t.data_mut(), p, prec, aux, forward)
    }

    pub(crate) fn continuous(&self, x: &mut [f64], positions: usize) -> f64 {
        for (i, v) in x.iter_mut().enumerate() {
            *v *= self.lambdas[i / positions];
        }
        positions as f64 * self.lambdas.iter().map(|l| l.abs().ln()).sum::<f64>()
    }
}
