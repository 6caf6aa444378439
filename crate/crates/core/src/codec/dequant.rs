//! Posterior and observation plugins of the bits-back pipeline.
//!
//! A [`PosteriorCoder`] draws the continuous latent `v̄` for integer data
//! `x°` by decoding from the stream, and gives those bits back when the
//! decoder re-encodes `v̄`. An [`ObservationCoder`] codes `x°` given `v̄`.
//! Dequantization is the case `v̄ = x° + ū` with `x° = ⌊v̄⌋`, which needs no
//! observation bits at all.

use crate::elemflow::{CellMap, FnKind, Maps, MonotoneFn};
use crate::error::{Error, Result};
use crate::fixedq::{mantissa_to_f64, Precision};
use crate::layers::{run, Prior, Tensor};
use crate::par::Exec;
use crate::ubcs::UniformCoder;

pub trait PosteriorCoder: Sync {
    /// Decode `v̄ ~ q(·|x°)`; `x` holds plain integers.
    fn decode_latent<C: UniformCoder>(&self, x: &Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<Tensor>;

    /// Exact inverse of [`PosteriorCoder::decode_latent`].
    fn encode_latent<C: UniformCoder>(
        &self,
        x: &Tensor,
        v: &Tensor,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
    ) -> Result<()>;

    /// `ln q(v|x°)` per element, `v` as a real.
    fn log_density(&self, x: i64, v: f64) -> f64;
}

pub trait ObservationCoder: Sync {
    fn encode_data<C: UniformCoder>(&self, x: &Tensor, v: &Tensor, prec: &Precision, aux: &mut C) -> Result<()>;

    fn decode_data<C: UniformCoder>(&self, v: &Tensor, prec: &Precision, aux: &mut C) -> Result<Tensor>;

    /// `ln P(x°|v)` per element.
    fn log_prob(&self, x: i64, v: f64) -> f64;
}

/// `x° = ⌊v̄⌋`: deterministic, costs nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Floor;

impl ObservationCoder for Floor {
    fn encode_data<C: UniformCoder>(&self, x: &Tensor, v: &Tensor, prec: &Precision, _aux: &mut C) -> Result<()> {
        if x.data().iter().zip(v.data()).any(|(&a, &b)| b >> prec.k != a) {
            return Err(Error::Parameter("latent does not floor to the data".into()));
        }
        Ok(())
    }

    fn decode_data<C: UniformCoder>(&self, v: &Tensor, prec: &Precision, _aux: &mut C) -> Result<Tensor> {
        let data = v.data().iter().map(|&m| m >> prec.k).collect();
        Tensor::new(v.channels(), v.positions(), data)
    }

    fn log_prob(&self, x: i64, v: f64) -> f64 {
        if v.floor() as i64 == x {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Fixed-weight conditional flow noise: `ū = σ(s·ε + t)` with `ε` logistic
/// and `log s = bound·tanh(a_s·n + b_s)`, `t = tanh(a_t·n + b_t)`, where `n`
/// rescales `x°` from its range to `[−1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowDequantizer {
    pub noise_scale: f64,
    pub scale_weight: f64,
    pub scale_bias: f64,
    pub shift_weight: f64,
    pub shift_bias: f64,
    pub scale_bound: f64,
}

/// Half-width of the sigmoid's domain; `s·ε + t` must stay inside it.
const SIGMOID_REACH: f64 = 10.0;
const NOISE_CLAMP: f64 = 12.0;

impl Default for FlowDequantizer {
    fn default() -> Self {
        FlowDequantizer {
            noise_scale: 0.45,
            scale_weight: 0.8,
            scale_bias: -0.1,
            shift_weight: 0.5,
            shift_bias: 0.2,
            scale_bound: 0.4,
        }
    }
}

impl FlowDequantizer {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.noise_scale,
            self.scale_weight,
            self.scale_bias,
            self.shift_weight,
            self.shift_bias,
            self.scale_bound,
        ];
        if all.iter().any(|v| !v.is_finite()) || self.noise_scale <= 0.0 || self.scale_bound < 0.0 {
            return Err(Error::Parameter("flow dequantizer needs finite weights and positive scales".into()));
        }
        let reach = self.scale_bound.exp() * NOISE_CLAMP * self.noise_scale + 1.0;
        if reach >= SIGMOID_REACH - 0.05 {
            return Err(Error::Parameter(format!(
                "noise reaches ±{reach:.2}, beyond the sigmoid domain ±{SIGMOID_REACH}"
            )));
        }
        Ok(())
    }

    fn noise(&self) -> Prior {
        Prior::Logistic {
            loc: 0.0,
            scale: self.noise_scale,
            clamp: NOISE_CLAMP,
        }
    }

    /// `(log s, t)` for integer value `x`. The conditioning input is `x`
    /// scaled by 1/128 and shifted by −1, so `[0, 256)` maps to `[−1, 1)`.
    fn params(&self, x: i64) -> (f64, f64) {
        let n = x as f64 / 128.0 - 1.0;
        (
            self.scale_bound * (self.scale_weight * n + self.scale_bias).tanh(),
            (self.shift_weight * n + self.shift_bias).tanh(),
        )
    }

    fn affine_maps(&self, x: &Tensor, prec: &Precision, exec: Exec) -> Result<Vec<CellMap>> {
        exec.map(x.data(), |&xi| {
            let (ls, t) = self.params(xi);
            CellMap::new(&MonotoneFn::affine(ls.exp(), t), prec.k, prec.h)
        })
        .into_iter()
        .collect()
    }

    fn sigmoid_map(prec: &Precision) -> Result<CellMap> {
        CellMap::new(
            &MonotoneFn::new(FnKind::Sigmoid).with_domain(-SIGMOID_REACH, SIGMOID_REACH),
            prec.k,
            prec.h,
        )
    }

    /// `ln q(u|x°)` for the continuous flow, `u ∈ (0, 1)`.
    pub fn log_q(&self, x: i64, u: f64) -> f64 {
        let y = (u / (1.0 - u)).ln();
        let (ls, t) = self.params(x);
        let eps = (y - t) / ls.exp();
        let log_sigmoid_prime = FnKind::Sigmoid.log_abs_derivative(y);
        self.noise().log_density(eps) - ls - log_sigmoid_prime
    }
}

/// How dequantization noise `ū ∈ [0, 1)^d` is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Dequantizer {
    /// `q(ū|x°) = 1`: `k` bits per dimension, all refunded.
    #[default]
    Uniform,
    Flow(FlowDequantizer),
}

impl Dequantizer {
    pub fn name(&self) -> &'static str {
        match self {
            Dequantizer::Uniform => "uniform",
            Dequantizer::Flow(_) => "flow",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dequantizer::Uniform => Ok(()),
            Dequantizer::Flow(f) => f.validate(),
        }
    }

    /// Mantissas of `ū` at precision `k`, all in `[0, 2^k)`.
    fn decode_noise<C: UniformCoder>(&self, x: &Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<Vec<i64>> {
        match self {
            Dequantizer::Uniform => {
                let n = 1u64 << prec.k;
                (0..x.len()).map(|_| aux.decode_wide(n).map(|u| u as i64)).collect()
            }
            Dequantizer::Flow(f) => {
                let mut e = f.noise().decode(x.len(), prec, aux, exec)?;
                let maps = f.affine_maps(x, prec, exec)?;
                run(true, &mut e, Maps::Each(&maps), prec, aux, exec)?;
                let sig = FlowDequantizer::sigmoid_map(prec)?;
                run(true, &mut e, Maps::Shared(&sig), prec, aux, exec)?;
                Ok(e)
            }
        }
    }

    fn encode_noise<C: UniformCoder>(
        &self,
        x: &Tensor,
        mut u: Vec<i64>,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
    ) -> Result<()> {
        match self {
            Dequantizer::Uniform => {
                let n = 1u64 << prec.k;
                for &v in u.iter().rev() {
                    aux.encode_wide(v as u64, n)?;
                }
                Ok(())
            }
            Dequantizer::Flow(f) => {
                let sig = FlowDequantizer::sigmoid_map(prec)?;
                run(false, &mut u, Maps::Shared(&sig), prec, aux, exec)?;
                let maps = f.affine_maps(x, prec, exec)?;
                run(false, &mut u, Maps::Each(&maps), prec, aux, exec)?;
                f.noise().encode(&u, prec, aux, exec)
            }
        }
    }
}

impl PosteriorCoder for Dequantizer {
    fn decode_latent<C: UniformCoder>(&self, x: &Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<Tensor> {
        let u = self.decode_noise(x, prec, aux, exec)?;
        let v = x.data().iter().zip(u).map(|(&xi, ui)| (xi << prec.k) + ui).collect();
        Tensor::new(x.channels(), x.positions(), v)
    }

    fn encode_latent<C: UniformCoder>(
        &self,
        x: &Tensor,
        v: &Tensor,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
    ) -> Result<()> {
        let mut u = Vec::with_capacity(v.len());
        for (&xi, &vi) in x.data().iter().zip(v.data()) {
            let ui = vi - (xi << prec.k);
            if ui < 0 || ui >> prec.k != 0 {
                return Err(Error::Corrupt("latent is not data plus noise in [0, 1)".into()));
            }
            u.push(ui);
        }
        self.encode_noise(x, u, prec, aux, exec)
    }

    fn log_density(&self, x: i64, v: f64) -> f64 {
        let u = v - x as f64;
        if !(0.0..1.0).contains(&u) {
            return f64::NEG_INFINITY;
        }
        match self {
            Dequantizer::Uniform => 0.0,
            Dequantizer::Flow(f) => f.log_q(x, u),
        }
    }
}

/// Slot resolution of [`Bernoulli`] probabilities.
pub const BERNOULLI_SLOT_BITS: u32 = 12;

/// Binary data with `P(x° = 1 | v) = σ(w·v + b)`, probabilities rounded to
/// `2^-12`. Coding a bit decodes an offset inside its slot range and then
/// encodes the slot, so the net cost is `−log₂ P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bernoulli {
    pub weight: f64,
    pub bias: f64,
}

impl Bernoulli {
    /// Slots given to `x° = 1` out of `2^12`.
    pub fn ones(&self, v: f64) -> u64 {
        let n = 1u64 << BERNOULLI_SLOT_BITS;
        let p = 1.0 / (1.0 + (-(self.weight * v + self.bias)).exp());
        ((p * n as f64).round() as u64).clamp(1, n - 1)
    }

    fn slot_range(&self, x: i64, v: f64) -> (u64, u64) {
        let n = 1u64 << BERNOULLI_SLOT_BITS;
        let ones = self.ones(v);
        if x == 1 {
            (n - ones, ones)
        } else {
            (0, n - ones)
        }
    }
}

impl ObservationCoder for Bernoulli {
    fn encode_data<C: UniformCoder>(&self, x: &Tensor, v: &Tensor, prec: &Precision, aux: &mut C) -> Result<()> {
        let n = 1u64 << BERNOULLI_SLOT_BITS;
        for (&xi, &vi) in x.data().iter().zip(v.data()) {
            if xi != 0 && xi != 1 {
                return Err(Error::Domain(format!("binary data holds {xi}")));
            }
            let (start, len) = self.slot_range(xi, mantissa_to_f64(vi, prec.k));
            let off = aux.decode(len)?;
            aux.encode(start + off, n)?;
        }
        Ok(())
    }

    fn decode_data<C: UniformCoder>(&self, v: &Tensor, prec: &Precision, aux: &mut C) -> Result<Tensor> {
        let n = 1u64 << BERNOULLI_SLOT_BITS;
        let mut x = vec![0i64; v.len()];
        for (i, &vi) in v.data().iter().enumerate().rev() {
            let vf = mantissa_to_f64(vi, prec.k);
            let slot = aux.decode(n)?;
            let xi = i64::from(slot >= n - self.ones(vf));
            let (start, len) = self.slot_range(xi, vf);
            aux.encode(slot - start, len)?;
            x[i] = xi;
        }
        Tensor::new(v.channels(), v.positions(), x)
    }

    fn log_prob(&self, x: i64, v: f64) -> f64 {
        let (_, len) = self.slot_range(x, v);
        (len as f64).ln() - (BERNOULLI_SLOT_BITS as f64) * std::f64::consts::LN_2
    }
}

/// `q(v|x°)`: logistic around `loc[x°]`, for binary `x°`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticPosterior {
    pub loc: [f64; 2],
    pub scale: f64,
}

impl LogisticPosterior {
    fn noise() -> Prior {
        Prior::default()
    }

    fn maps(&self, x: &Tensor, prec: &Precision) -> Result<Vec<CellMap>> {
        let m = [
            CellMap::new(&MonotoneFn::affine(self.scale, self.loc[0]), prec.k, prec.h)?,
            CellMap::new(&MonotoneFn::affine(self.scale, self.loc[1]), prec.k, prec.h)?,
        ];
        x.data()
            .iter()
            .map(|&xi| match xi {
                0 | 1 => Ok(m[xi as usize].clone()),
                _ => Err(Error::Domain(format!("binary data holds {xi}"))),
            })
            .collect()
    }
}

impl PosteriorCoder for LogisticPosterior {
    fn decode_latent<C: UniformCoder>(&self, x: &Tensor, prec: &Precision, aux: &mut C, exec: Exec) -> Result<Tensor> {
        let maps = self.maps(x, prec)?;
        let mut e = LogisticPosterior::noise().decode(x.len(), prec, aux, exec)?;
        run(true, &mut e, Maps::Each(&maps), prec, aux, exec)?;
        Tensor::new(x.channels(), x.positions(), e)
    }

    fn encode_latent<C: UniformCoder>(
        &self,
        x: &Tensor,
        v: &Tensor,
        prec: &Precision,
        aux: &mut C,
        exec: Exec,
    ) -> Result<()> {
        let maps = self.maps(x, prec)?;
        let mut e = v.data().to_vec();
        run(false, &mut e, Maps::Each(&maps), prec, aux, exec)?;
        LogisticPosterior::noise().encode(&e, prec, aux, exec)
    }

    fn log_density(&self, x: i64, v: f64) -> f64 {
        let eps = (v - self.loc[x as usize]) / self.scale;
        LogisticPosterior::noise().log_density(eps) - self.scale.ln()
    }
}
