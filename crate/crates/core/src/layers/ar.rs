use super::{run, Tensor};
use crate::elemflow::{CellMap, Maps, MonotoneFn};
use crate::error::{Error, Result};
use crate::fixedq::{mantissa_to_f64, Precision};
use crate::par::Exec;
use crate::ubcs::UniformCoder;

/// Fixed-weight map from earlier channels at one position to affine
/// parameters of the current split: `log s = bound·tanh(A_s·x + b_s)` and
/// `t = A_t·x + b_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioner {
    pub scale_weight: Vec<Vec<f64>>,
    pub scale_bias: Vec<f64>,
    pub shift_weight: Vec<Vec<f64>>,
    pub shift_bias: Vec<f64>,
    pub scale_bound: f64,
}

impl Conditioner {
    pub fn outputs(&self) -> usize {
        self.scale_bias.len()
    }

    pub fn inputs(&self) -> usize {
        self.scale_weight.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self, inputs: usize, outputs: usize) -> Result<()> {
        let shape_ok = |w: &Vec<Vec<f64>>, b: &Vec<f64>| {
            w.len() == outputs && b.len() == outputs && w.iter().all(|r| r.len() == inputs)
        };
        if !shape_ok(&self.scale_weight, &self.scale_bias) || !shape_ok(&self.shift_weight, &self.shift_bias) {
            return Err(Error::Parameter(format!(
                "conditioner weights must be {outputs}×{inputs} with {outputs} biases"
            )));
        }
        let all = self
            .scale_weight
            .iter()
            .chain(&self.shift_weight)
            .flatten()
            .chain(&self.scale_bias)
            .chain(&self.shift_bias);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("conditioner has non-finite weights".into()));
        }
        if !(self.scale_bound.is_finite() && self.scale_bound >= 0.0 && self.scale_bound <= 8.0) {
            return Err(Error::Parameter("scale bound must lie in [0, 8]".into()));
        }
        Ok(())
    }

    /// `(log s, t)` for every output channel.
    pub fn params(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let dot = |w: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (0..self.outputs())
            .map(|o| {
                let u = dot(&self.scale_weight[o]) + self.scale_bias[o];
                let t = dot(&self.shift_weight[o]) + self.shift_bias[o];
                (self.scale_bound * u.tanh(), t)
            })
            .collect()
    }
}

/// Autoregressive flow over channel splits. Split `i` covers channels
/// `bounds[i]..bounds[i+1]` and is transformed by an affine map whose
/// parameters depend only on channels before `bounds[i]`. A split without a
/// conditioner passes through unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoregressive {
    bounds: Vec<usize>,
    conds: Vec<Option<Conditioner>>,
}

impl Autoregressive {
    pub fn new(bounds: Vec<usize>, conds: Vec<Option<Conditioner>>) -> Result<Self> {
        if bounds.len() < 2 || bounds[0] != 0 || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("split bounds must increase strictly from 0".into()));
        }
        if conds.len() != bounds.len() - 1 {
            return Err(Error::Parameter(format!(
                "{} splits need {} conditioners, got {}",
                bounds.len() - 1,
                bounds.len() - 1,
                conds.len()
            )));
        }
        for (i, c) in conds.iter().enumerate() {
            if let Some(c) = c {
                c.validate(bounds[i], bounds[i + 1] - bounds[i])
                    .map_err(|e| Error::Parameter(format!("split {i}: {e}")))?;
            }
        }
        Ok(Autoregressive { bounds, conds })
    }

    /// Two splits with the first passed through: `channels` total, the first
    /// `split` of them conditioning the rest.
    pub fn coupling(channels: usize, split: usize, cond: Conditioner) -> Result<Self> {
        if split == 0 || split >= channels {
            return Err(Error::Parameter(format!(
                "coupling split {split} must lie in [1, {channels})"
            )));
        }
        Autoregressive::new(vec![0, split, channels], vec![None, Some(cond)])
    }

    pub fn is_coupling(&self) -> bool {
        self.conds.len() == 2 && self.conds[0].is_none()
    }

    pub fn dim(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn conditioners(&self) -> &[Option<Conditioner>] {
        &self.conds
    }

    fn split_maps(&self, i: usize, t: &Tensor, prec: &Precision, exec: Exec) -> Result<Option<Vec<CellMap>>> {
        let Some(cond) = &self.conds[i] else {
            return Ok(None);
        };
        let (lo, hi) = (self.bounds[i], self.bounds[i + 1]);
        let p = t.positions();
        let params: Vec<Vec<(f64, f64)>> = exec.map_range(p, |j| {
            let x: Vec<f64> = (0..lo).map(|c| mantissa_to_f64(t.data()[c * p + j], prec.k)).collect();
            cond.params(&x)
        });
        let maps = exec
            .map_range((hi - lo) * p, |e| {
                let (ls, sh) = params[e % p][e / p];
                CellMap::new(&MonotoneFn::affine(ls.exp(), sh), prec.k, prec.h)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(maps))
    }

    fn apply_split<C: UniformCoder>(
        &self,
        i: usize,
        t: &mut Tensor,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
        forward: bool,
    ) -> Result<()> {
        let Some(maps) = self.split_maps(i, t, prec, exec)? else {
            return Ok(());
        };
        let p = t.positions();
        let (lo, hi) = (self.bounds[i], self.bounds[i + 1]);
        run(forward, &mut t.data_mut()[lo * p..hi * p], Maps::Each(&maps), prec, aux, exec)
    }

    pub(crate) fn forward<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        for i in (0..self.conds.len()).rev() {
            self.apply_split(i, t, prec, aux, exec, true)?;
        }
        Ok(())
    }

    pub(crate) fn inverse<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        for i in 0..self.conds.len() {
            self.apply_split(i, t, prec, aux, exec, false)?;
        }
        Ok(())
    }

    pub(crate) fn continuous(&self, x: &mut [f64], positions: usize) -> f64 {
        let mut ld = 0.0;
        for i in (0..self.conds.len()).rev() {
            let Some(cond) = &self.conds[i] else { continue };
            let lo = self.bounds[i];
            for j in 0..positions {
                let inp: Vec<f64> = (0..lo).map(|c| x[c * positions + j]).collect();
                for (o, (ls, sh)) in cond.params(&inp).into_iter().enumerate() {
                    let v = &mut x[(lo + o) * positions + j];
                    *v = ls.exp() * *v + sh;
                    ld += ls;
                }
            }
        }
        ld
    }
}
