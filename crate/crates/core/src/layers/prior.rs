//! Factorized prior over latents, coded through its CDF.
//!
//! For a logistic prior each latent is pushed through the interpolated CDF,
//! giving a k-bit fraction that is then stored with `U(0, 2^k)`. The two steps
//! together cost about `−log₂(p(z̄)·2^-k)` bits per element.

use super::run;
use crate::elemflow::{CellMap, FnKind, Maps, MonotoneFn, Strategy};
use crate::error::{Error, Result};
use crate::fixedq::{quantize_mantissa, Precision};
use crate::par::Exec;
use crate::ubcs::UniformCoder;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prior {
    /// Logistic density; latents beyond `clamp` scales from `loc` are rejected.
    Logistic { loc: f64, scale: f64, clamp: f64 },
    /// Uniform density on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Logistic {
            loc: 0.0,
            scale: 1.0,
            clamp: 12.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Logistic { loc, scale, clamp } => {
                if !(loc.is_finite() && scale.is_finite() && scale > 0.0) {
                    return Err(Error::Parameter("logistic prior needs a positive scale".into()));
                }
                if !(clamp.is_finite() && clamp > 0.0) {
                    return Err(Error::Parameter("logistic clamp must be positive".into()));
                }
            }
            Prior::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Parameter("uniform prior needs lo < hi".into()));
                }
            }
        }
        Ok(())
    }

    /// Natural log density at `z`.
    pub fn log_density(&self, z: f64) -> f64 {
        match *self {
            Prior::Logistic { loc, scale, .. } => {
                let t = (z - loc) / scale;
                -t - 2.0 * softplus(-t) - scale.ln()
            }
            Prior::Uniform { lo, hi } => {
                if z >= lo && z < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// The CDF as an element-wise function, when the prior is coded through one.
    pub fn cdf_fn(&self) -> Option<MonotoneFn> {
        match *self {
            Prior::Logistic { loc, scale, clamp } => Some(
                MonotoneFn::new(FnKind::LogisticCdf { loc, scale })
                    .with_domain(loc - clamp * scale, loc + clamp * scale)
                    .with_strategy(Strategy::UniformZ),
            ),
            Prior::Uniform { .. } => None,
        }
    }

    fn uniform_bounds(&self, k: u32) -> Result<(i64, i64)> {
        match *self {
            Prior::Uniform { lo, hi } => Ok((-quantize_mantissa(-lo, k)?, -quantize_mantissa(-hi, k)?)),
            _ => unreachable!(),
        }
    }
}

/// Map latents in place to their k-bit CDF fractions.
pub fn prior_cdf_forward<C: UniformCoder>(
    z: &mut [i64],
    prior: &Prior,
    prec: &Precision,
    aux: &mut C,
    exec: Exec,
) -> Result<()> {
    let f = prior
        .cdf_fn()
        .ok_or_else(|| Error::Parameter("prior has no CDF layer".into()))?;
    let map = CellMap::new(&f, prec.k, prec.h)?;
    run(true, z, Maps::Shared(&map), prec, aux, exec)
}

pub fn prior_cdf_inverse<C: UniformCoder>(
    u: &mut [i64],
    prior: &Prior,
    prec: &Precision,
    aux: &mut C,
    exec: Exec,
) -> Result<()> {
    let f = prior
        .cdf_fn()
        .ok_or_else(|| Error::Parameter("prior has no CDF layer".into()))?;
    let map = CellMap::new(&f, prec.k, prec.h)?;
    run(false, u, Maps::Shared(&map), prec, aux, exec)
}

impl Prior {
    /// Encode latents `z` (mantissas at precision `k`) onto the stream.
    pub fn encode<C: UniformCoder>(&self, z: &[i64], prec: &Precision, aux: &mut C, exec: Exec) -> Result<()> {
        match self {
            Prior::Logistic { .. } => {
                let mut u = z.to_vec();
                prior_cdf_forward(&mut u, self, prec, aux, exec)?;
                let n = 1u64 << prec.k;
                for &v in &u {
                    aux.encode_wide(v as u64, n)?;
                }
            }
            Prior::Uniform { .. } => {
                let (lo, hi) = self.uniform_bounds(prec.k)?;
                let n = (hi - lo) as u64;
                for &v in z {
                    if v < lo || v >= hi {
                        return Err(Error::Domain(format!("latent mantissa {v} outside the uniform prior")));
                    }
                    aux.encode_wide((v - lo) as u64, n)?;
                }
            }
        }
        Ok(())
    }

    /// Decode `n` latents, the exact inverse of [`Prior::encode`].
    pub fn decode<C: UniformCoder>(&self, n: usize, prec: &Precision, aux: &mut C, exec: Exec) -> Result<Vec<i64>> {
        let mut out = vec![0i64; n];
        match self {
            Prior::Logistic { .. } => {
                let m = 1u64 << prec.k;
                for v in out.iter_mut().rev() {
                    *v = aux.decode_wide(m)? as i64;
                }
                prior_cdf_inverse(&mut out, self, prec, aux, exec)?;
            }
            Prior::Uniform { .. } => {
                let (lo, hi) = self.uniform_bounds(prec.k)?;
                let m = (hi - lo) as u64;
                for v in out.iter_mut().rev() {
                    *v = lo + aux.decode_wide(m)? as i64;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::filled;
    use super::*;
    use crate::fixedq::mantissa_to_f64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_at_center_is_half() {
        let f = Prior::default().cdf_fn().unwrap();
        assert_eq!(f.eval(0.0), 0.5);
        assert_eq!(-Prior::default().log_density(0.0) / std::f64::consts::LN_2, 2.0);
    }

    #[test]
    fn logistic_bits_match_density() {
        let prior = Prior::default();
        let p = Precision::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let z: Vec<i64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(1e-5..1.0 - 1e-5);
                quantize_mantissa((u / (1.0 - u)).ln(), p.k).unwrap()
            })
            .collect();
        let expect: f64 = z
            .iter()
            .map(|&v| (p.k as f64) - prior.log_density(mantissa_to_f64(v, p.k)) / std::f64::consts::LN_2)
            .sum::<f64>()
            / n as f64;
        let mut aux = filled(8 * n, 2);
        let before = aux.clone();
        let l0 = aux.information_bits();
        prior.encode(&z, &p, &mut aux, Exec::Parallel).unwrap();
        let got = (aux.information_bits() - l0) / n as f64;
        assert!((got - expect).abs() < 0.01, "{got} vs {expect}");
        let back = prior.decode(n, &p, &mut aux, Exec::Parallel).unwrap();
        assert_eq!(back, z);
        assert_eq!(aux, before);
    }

    #[test]
    fn tails_round_trip() {
        let prior = Prior::Logistic { loc: 0.5, scale: 2.0, clamp: 12.0 };
        let p = Precision::default();
        let lo = quantize_mantissa(0.5 - 24.0, p.k).unwrap();
        let hi = quantize_mantissa(0.5 + 24.0, p.k).unwrap();
        let z = vec![lo, lo + 1, lo + 12345, hi - 1, hi - 99, 0];
        let mut aux = filled(64, 3);
        let before = aux.clone();
        prior.encode(&z, &p, &mut aux, Exec::Sequential).unwrap();
        assert_eq!(prior.decode(z.len(), &p, &mut aux, Exec::Sequential).unwrap(), z);
        assert_eq!(aux, before);
        assert!(prior.encode(&[hi], &p, &mut aux, Exec::Sequential).is_err());
    }

    #[test]
    fn uniform_prior_costs_log_width() {
        let prior = Prior::Uniform { lo: 0.0, hi: 256.0 };
        let p = Precision::default();
        let mut aux = filled(4, 5);
        let l0 = aux.information_bits();
        let z: Vec<i64> = (0..100).map(|i| i * (1 << 28) + i).collect();
        prior.encode(&z, &p, &mut aux, Exec::Sequential).unwrap();
        let per = (aux.information_bits() - l0) / 100.0;
        assert!((per - 36.0).abs() < 1e-3, "{per}");
        assert_eq!(prior.decode(100, &p, &mut aux, Exec::Sequential).unwrap(), z);
        assert!(prior.encode(&[-1], &p, &mut aux, Exec::Sequential).is_err());
    }

    #[test]
    fn wide_k_uses_split_symbols() {
        let prior = Prior::default();
        let p = Precision::new(32, 12, 1 << 16, 2).unwrap();
        let z: Vec<i64> = vec![0, 1 << 32, -(3 << 32) + 7];
        let mut aux = filled(64, 4);
        let before = aux.clone();
        prior.encode(&z, &p, &mut aux, Exec::Sequential).unwrap();
        assert_eq!(prior.decode(3, &p, &mut aux, Exec::Sequential).unwrap(), z);
        assert_eq!(aux, before);
    }
}
