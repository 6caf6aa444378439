//! Composite invertible layers acting on channel × position tensors.

mod ar;
mod conv;
mod lu;
mod prior;
mod scale;

pub use ar::{Autoregressive, Conditioner};
pub use conv::Conv1x1;
pub use lu::{lu_decompose, LuFactors};
pub use prior::{prior_cdf_forward, prior_cdf_inverse, Prior};
pub use scale::ChannelScale;

use crate::elemflow::{build_maps, elem_forward_batch, elem_inverse_batch, Maps, MonotoneFn};
use crate::error::{Error, Result};
use crate::fixedq::{Precision, MANTISSA_LIMIT};
use crate::par::Exec;
use crate::ubcs::UniformCoder;

/// Mantissas at precision `k`, laid out channel-major: element `(c, p)` is at
/// `c·positions + p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    channels: usize,
    positions: usize,
    data: Vec<i64>,
}

impl Tensor {
    pub fn new(channels: usize, positions: usize, data: Vec<i64>) -> Result<Self> {
        if channels * positions != data.len() {
            return Err(Error::Parameter(format!(
                "{} values do not fill {channels}×{positions}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            positions,
            data,
        })
    }

    pub fn zeros(channels: usize, positions: usize) -> Self {
        Tensor {
            channels,
            positions,
            data: vec![0; channels * positions],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[i64] {
        &self.data[c * self.positions..(c + 1) * self.positions]
    }

    /// Values of all channels at position `p`.
    pub fn column(&self, p: usize) -> Vec<i64> {
        (0..self.channels).map(|c| self.data[c * self.positions + p]).collect()
    }
}

/// `⌊Σ cᵢ·x̂ᵢ⌋`, the k-precision quantization of a weighted sum of values.
pub(crate) fn quant_dot(coefs: &[f64], xs: &[i64]) -> Result<i64> {
    let s: f64 = coefs.iter().zip(xs).map(|(c, &x)| c * x as f64).sum::<f64>().floor();
    if !(s.abs() <= MANTISSA_LIMIT as f64) {
        return Err(Error::Range(format!("weighted sum {s} overflows")));
    }
    Ok(s as i64)
}

pub(crate) fn check_range(v: i64) -> Result<i64> {
    if v.abs() > MANTISSA_LIMIT {
        return Err(Error::Range(format!("mantissa {v} overflows")));
    }
    Ok(v)
}

/// Element-wise layer with one function shared by all elements or one per
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Elementwise {
    pub fns: Vec<MonotoneFn>,
}

impl Elementwise {
    pub fn new(fns: Vec<MonotoneFn>) -> Result<Self> {
        if fns.is_empty() {
            return Err(Error::Parameter("element-wise layer needs a function".into()));
        }
        for f in &fns {
            f.validate()?;
        }
        Ok(Elementwise { fns })
    }

    fn fn_for(&self, c: usize) -> &MonotoneFn {
        &self.fns[if self.fns.len() == 1 { 0 } else { c }]
    }

    fn apply<C: UniformCoder>(
        &self,
        t: &mut Tensor,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
        forward: bool,
    ) -> Result<()> {
        let maps = build_maps(&self.fns, prec, exec)?;
        let p = t.positions;
        if maps.len() == 1 {
            run(forward, &mut t.data, Maps::Shared(&maps[0]), prec, aux, exec)
        } else {
            run(forward, &mut t.data, Maps::Strided(&maps, p), prec, aux, exec)
        }
    }

    fn continuous(&self, x: &mut [f64], positions: usize) -> f64 {
        let mut ld = 0.0;
        for (i, v) in x.iter_mut().enumerate() {
            let f = self.fn_for(i / positions);
            ld += f.kind.log_abs_derivative(*v);
            *v = f.eval(*v);
        }
        ld
    }
}

pub(crate) fn run<C: UniformCoder>(
    forward: bool,
    v: &mut [i64],
    maps: Maps<'_>,
    prec: &Precision,
    aux: &mut C,
    exec: Exec,
) -> Result<()> {
    if forward {
        elem_forward_batch(v, maps, prec, aux, exec)
    } else {
        elem_inverse_batch(v, maps, prec, aux, exec)
    }
}

/// One invertible layer of a flow.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Elementwise(Elementwise),
    ChannelScale(ChannelScale),
    Conv1x1(Conv1x1),
    Autoregressive(Autoregressive),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Elementwise(_) => "elementwise",
            Layer::ChannelScale(_) => "channel_scale",
            Layer::Conv1x1(_) => "conv1x1",
            Layer::Autoregressive(a) if a.is_coupling() => "coupling",
            Layer::Autoregressive(_) => "autoregressive",
        }
    }

    /// Channel count the layer requires, if it constrains it.
    pub fn channels(&self) -> Option<usize> {
        match self {
            Layer::Elementwise(e) if e.fns.len() > 1 => Some(e.fns.len()),
            Layer::Elementwise(_) => None,
            Layer::ChannelScale(s) => Some(s.dim()),
            Layer::Conv1x1(c) => Some(c.dim()),
            Layer::Autoregressive(a) => Some(a.dim()),
        }
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        match self.channels() {
            Some(c) if c != t.channels => Err(Error::Parameter(format!(
                "{} layer expects {c} channels, tensor has {}",
                self.kind_name(),
                t.channels
            ))),
            _ => Ok(()),
        }
    }

    pub fn forward<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        self.check(t)?;
        match self {
            Layer::Elementwise(e) => e.apply(t, prec, aux, exec, true),
            Layer::ChannelScale(s) => s.apply(t, prec, aux, true),
            Layer::Conv1x1(c) => c.forward(t, prec, aux, exec),
            Layer::Autoregressive(a) => a.forward(t, prec, aux, exec),
        }
    }

    pub fn inverse<C: UniformCoder>(&self, t: &mut Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        self.check(t)?;
        match self {
            Layer::Elementwise(e) => e.apply(t, prec, aux, exec, false),
            Layer::ChannelScale(s) => s.apply(t, prec, aux, false),
            Layer::Conv1x1(c) => c.inverse(t, prec, aux, exec),
            Layer::Autoregressive(a) => a.inverse(t, prec, aux, exec),
        }
    }

    /// Continuous transform of `x` (channel-major, `positions` per channel)
    /// in place, returning `ln |det J|`.
    pub fn forward_continuous(&self, x: &mut [f64], positions: usize) -> f64 {
        match self {
            Layer::Elementwise(e) => e.continuous(x, positions),
            Layer::ChannelScale(s) => s.continuous(x, positions),
            Layer::Conv1x1(c) => c.continuous(x, positions),
            Layer::Autoregressive(a) => a.continuous(x, positions),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elemflow::FnKind;
    use crate::ubcs::{BitStream, CoderParams, CoderState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn filled(n: usize, seed: u64) -> CoderState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..n).map(|_| rng.gen()).collect();
        CoderState::from_parts(CoderParams::default(), 1 << 20, BitStream::from_words(words)).unwrap()
    }

    #[test]
    fn tensor_layout() {
        let t = Tensor::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.channel(1), &[4, 5, 6]);
        assert_eq!(t.column(2), vec![3, 6]);
        assert!(Tensor::new(2, 2, vec![1]).is_err());
    }

    #[test]
    fn quant_dot_floors() {
        assert_eq!(quant_dot(&[0.5, 0.25], &[3, 1]).unwrap(), 1);
        assert_eq!(quant_dot(&[-0.5], &[3]).unwrap(), -2);
        assert!(quant_dot(&[1e300], &[5]).is_err());
    }

    #[test]
    fn per_channel_elementwise_round_trip() {
        let e = Layer::Elementwise(
            Elementwise::new(vec![
                MonotoneFn::new(FnKind::Sigmoid).with_domain(-8.0, 8.0),
                MonotoneFn::affine(-2.0, 1.0),
            ])
            .unwrap(),
        );
        let p = Precision::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<i64> = (0..2 * 500).map(|_| rng.gen_range(-(3 << 28)..3 << 28)).collect();
        let x = Tensor::new(2, 500, data).unwrap();
        let mut aux = filled(4096, 2);
        let before = aux.clone();
        let mut t = x.clone();
        e.forward(&mut t, &p, &mut aux, Exec::Parallel).unwrap();
        let z1 = t.channel(1)[0] as f64 / (1u64 << 28) as f64;
        let x1 = x.channel(1)[0] as f64 / (1u64 << 28) as f64;
        assert!((z1 - (-2.0 * x1 + 1.0)).abs() < 1e-3);
        e.inverse(&mut t, &p, &mut aux, Exec::Parallel).unwrap();
        assert_eq!(t, x);
        assert_eq!(aux, before);
        assert!(e.forward(&mut Tensor::zeros(3, 4), &p, &mut aux, Exec::Parallel).is_err());
    }
}
