//! Modular scale transform.
//!
//! Multiplies a fixed point value by `R/S` exactly and invertibly. The
//! forward direction decodes `r_d ~ U(0, R)` from the auxiliary stream,
//! forms `ŷ = R·x̂ + r_d`, outputs `ẑ = ⌊ŷ/S⌋` and encodes the remainder
//! `r_e = ŷ mod S` with `U(0, S)`. Net stream growth is `log₂ S − log₂ R`.

use crate::error::{Error, Result};
use crate::fixedq::{FixedPoint, MANTISSA_LIMIT};
use crate::ubcs::UniformCoder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RationalScale {
    r: u64,
    s: u64,
}

impl RationalScale {
    pub fn new(r: u64, s: u64) -> Result<Self> {
        if r == 0 || s == 0 {
            return Err(Error::DegenerateScale(format!("R={r}, S={s}")));
        }
        Ok(RationalScale { r, s })
    }

    /// `R = round(S·a)`.
    pub fn approximate(a: f64, s: u64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::DegenerateScale(format!("slope {a} is not positive")));
        }
        if s < 2 {
            return Err(Error::Parameter(format!("denominator S={s} below 2")));
        }
        let r = (s as f64 * a).round();
        if r < 1.0 {
            return Err(Error::DegenerateScale(format!(
                "slope {a} rounds to R=0 at S={s}"
            )));
        }
        if r >= (1u64 << 53) as f64 {
            return Err(Error::Range(format!("slope {a} too large at S={s}")));
        }
        RationalScale::new(r as u64, s)
    }

    pub fn r(&self) -> u64 {
        self.r
    }

    pub fn s(&self) -> u64 {
        self.s
    }

    pub fn ratio(&self) -> f64 {
        self.r as f64 / self.s as f64
    }

    /// `log₂ S − log₂ R`, the net bits the transform adds to the stream.
    pub fn codelength(&self) -> f64 {
        (self.s as f64).log2() - (self.r as f64).log2()
    }

    fn check_codable(&self, max: u64) -> Result<()> {
        if self.r > max || self.s > max {
            return Err(Error::Parameter(format!(
                "R={} or S={} exceeds the coder alphabet limit {max}",
                self.r, self.s
            )));
        }
        Ok(())
    }
}

/// `(ẑ, r_e)` from `(x̂, r_d)`.
#[inline]
pub fn forward_parts(x: i64, r_d: u64, scale: RationalScale) -> Result<(i64, u64)> {
    let y = scale.r as i128 * x as i128 + r_d as i128;
    let s = scale.s as i128;
    let z = y.div_euclid(s);
    if z.abs() > MANTISSA_LIMIT as i128 {
        return Err(Error::Range(format!("scaled mantissa {z} overflows")));
    }
    Ok((z as i64, y.rem_euclid(s) as u64))
}

/// `(x̂, r_d)` from `(ẑ, r_e)`.
#[inline]
pub fn inverse_parts(z: i64, r_e: u64, scale: RationalScale) -> (i64, u64) {
    let y = scale.s as i128 * z as i128 + r_e as i128;
    let r = scale.r as i128;
    (y.div_euclid(r) as i64, y.rem_euclid(r) as u64)
}

/// A scale bound to the auxiliary stream it borrows bits from.
pub struct MstContext<'a, C: UniformCoder> {
    pub scale: RationalScale,
    pub k: u32,
    pub aux: &'a mut C,
}

impl<'a, C: UniformCoder> MstContext<'a, C> {
    pub fn new(scale: RationalScale, k: u32, aux: &'a mut C) -> Self {
        MstContext { scale, k, aux }
    }

    pub fn forward(&mut self, x: FixedPoint) -> Result<FixedPoint> {
        mst_forward(x, self.scale, self.aux)
    }

    pub fn inverse(&mut self, z: FixedPoint) -> Result<FixedPoint> {
        mst_inverse(z, self.scale, self.aux)
    }
}

pub fn mst_forward<C: UniformCoder>(
    x: FixedPoint,
    scale: RationalScale,
    aux: &mut C,
) -> Result<FixedPoint> {
    scale.check_codable(aux.max_alphabet())?;
    let r_d = aux.decode(scale.r)?;
    let (z, r_e) = forward_parts(x.to_integer(), r_d, scale)?;
    aux.encode(r_e, scale.s)?;
    Ok(FixedPoint::from_integer(z, x.k()))
}

pub fn mst_inverse<C: UniformCoder>(
    z: FixedPoint,
    scale: RationalScale,
    aux: &mut C,
) -> Result<FixedPoint> {
    scale.check_codable(aux.max_alphabet())?;
    let r_e = aux.decode(scale.s)?;
    let (x, r_d) = inverse_parts(z.to_integer(), r_e, scale);
    aux.encode(r_d, scale.r)?;
    Ok(FixedPoint::from_integer(x, z.k()))
}

/// Forward MST over a batch with per-element numerators and one denominator.
///
/// All `r_d` are decoded first in element order, then all `r_e` are encoded
/// in element order, so the stream dips by `Σ log₂ R_i` before it grows.
pub fn mst_forward_batch<C: UniformCoder>(
    xs: &[i64],
    rs: &[u64],
    s: u64,
    aux: &mut C,
    out: &mut [i64],
) -> Result<()> {
    debug_assert!(xs.len() == rs.len() && xs.len() == out.len());
    let max = aux.max_alphabet();
    if s > max || rs.iter().any(|&r| r > max) {
        return Err(Error::Parameter(format!("scale exceeds the coder alphabet limit {max}")));
    }
    let mut rem = Vec::with_capacity(xs.len());
    for &r in rs {
        rem.push(aux.decode(r)?);
    }
    for i in 0..xs.len() {
        let (z, r_e) = forward_parts(xs[i], rem[i], RationalScale::new(rs[i], s)?)?;
        out[i] = z;
        rem[i] = r_e;
    }
    for &r_e in &rem {
        aux.encode(r_e, s)?;
    }
    Ok(())
}

/// Exact inverse of [`mst_forward_batch`].
pub fn mst_inverse_batch<C: UniformCoder>(
    zs: &[i64],
    rs: &[u64],
    s: u64,
    aux: &mut C,
    out: &mut [i64],
) -> Result<()> {
    debug_assert!(zs.len() == rs.len() && zs.len() == out.len());
    let max = aux.max_alphabet();
    if s > max || rs.iter().any(|&r| r > max) {
        return Err(Error::Parameter(format!("scale exceeds the coder alphabet limit {max}")));
    }
    let mut rem = vec![0u64; zs.len()];
    for slot in rem.iter_mut().rev() {
        *slot = aux.decode(s)?;
    }
    for i in 0..zs.len() {
        let (x, r_d) = inverse_parts(zs[i], rem[i], RationalScale::new(rs[i], s)?);
        out[i] = x;
        rem[i] = r_d;
    }
    for i in (0..zs.len()).rev() {
        aux.encode(rem[i], rs[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ubcs::{BitStream, CoderParams, CoderState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filled(n: usize, seed: u64) -> CoderState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..n).map(|_| rng.gen()).collect();
        CoderState::from_parts(CoderParams::default(), 1 << 20, BitStream::from_words(words)).unwrap()
    }

    #[test]
    fn approximate_examples() {
        assert_eq!(RationalScale::approximate(1.0, 1 << 16).unwrap().r(), 1 << 16);
        let s = RationalScale::approximate(1.5, 100).unwrap();
        assert_eq!((s.r(), s.s()), (150, 100));
        assert!(matches!(
            RationalScale::approximate(2f64.powi(-20), 1 << 16),
            Err(Error::DegenerateScale(_))
        ));
        assert!(RationalScale::approximate(-1.0, 100).is_err());
        assert!(RationalScale::approximate(0.0, 100).is_err());
        assert!(RationalScale::new(0, 3).is_err());
    }

    #[test]
    fn approximation_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = rng.gen_range(0.01..100.0);
            let s = rng.gen_range(2..1u64 << 20);
            let q = RationalScale::approximate(a, s).unwrap();
            assert!((a - q.ratio()).abs() <= 0.5 / s as f64 + 1e-15 * a);
        }
    }

    #[test]
    fn forward_parts_example() {
        let sc = RationalScale::new(3, 2).unwrap();
        assert_eq!(forward_parts(5, 1, sc).unwrap(), (8, 0));
        assert_eq!(inverse_parts(8, 0, sc), (5, 1));
    }

    #[test]
    fn identity_scale() {
        let sc = RationalScale::new(77, 77).unwrap();
        for x in -300..300 {
            for r_d in [0, 5, 76] {
                assert_eq!(forward_parts(x, r_d, sc).unwrap(), (x, r_d));
            }
        }
        let mut aux = filled(4, 2);
        let before = aux.clone();
        let x = FixedPoint::from_integer(-12345, 10);
        let z = mst_forward(x, sc, &mut aux).unwrap();
        assert_eq!(z, x);
        assert_eq!(mst_inverse(z, sc, &mut aux).unwrap(), x);
        assert_eq!(aux, before);
    }

    #[test]
    fn round_trip_restores_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut aux = filled(64, 4);
        for _ in 0..10_000 {
            let sc = RationalScale::new(rng.gen_range(1..1 << 20), rng.gen_range(1..1 << 20)).unwrap();
            let x = FixedPoint::from_integer(rng.gen_range(-(1i64 << 40)..1 << 40), 28);
            let before = aux.clone();
            let mut ctx = MstContext::new(sc, 28, &mut aux);
            let z = ctx.forward(x).unwrap();
            let back = ctx.inverse(z).unwrap();
            assert_eq!(back, x);
            assert_eq!(aux, before);
        }
    }

    #[test]
    fn error_bound_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 20;
        let mut aux = filled(1 << 12, 6);
        for _ in 0..10_000 {
            let a: f64 = rng.gen_range(0.05..20.0);
            let s = rng.gen_range(2..1u64 << 16);
            let sc = RationalScale::approximate(a, s).unwrap();
            let x = FixedPoint::from_integer(rng.gen_range(-(1i64 << 24)..1 << 24), k);
            let z = mst_forward(x, sc, &mut aux).unwrap();
            let xv = x.to_f64();
            let bound = 0.5 * xv.abs() / s as f64
                + 2f64.powi(-(k as i32))
                + (sc.r() - 1) as f64 / (s as f64 * 2f64.powi(k as i32));
            assert!((z.to_f64() - a * xv).abs() <= bound * (1.0 + 1e-12), "a={a} x={xv}");
        }
    }

    #[test]
    fn underflow_when_stream_is_empty() {
        let mut aux = CoderState::new(CoderParams::default());
        let sc = RationalScale::new(1 << 20, 1 << 16).unwrap();
        assert!(matches!(
            mst_forward(FixedPoint::from_integer(3, 4), sc, &mut aux),
            Err(Error::Underflow)
        ));
    }

    #[test]
    fn batch_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut aux = filled(256, 9);
        let before = aux.clone();
        let n = 500;
        let xs: Vec<i64> = (0..n).map(|_| rng.gen_range(-(1 << 30)..1 << 30)).collect();
        let rs: Vec<u64> = (0..n).map(|_| rng.gen_range(1..1 << 17)).collect();
        let mut zs = vec![0; n];
        mst_forward_batch(&xs, &rs, 1 << 16, &mut aux, &mut zs).unwrap();
        for i in 0..n {
            let q = (rs[i] as i128 * xs[i] as i128).div_euclid(1 << 16);
            assert!(zs[i] as i128 - q <= rs[i] as i128 / (1 << 16) + 1);
        }
        let mut back = vec![0; n];
        mst_inverse_batch(&zs, &rs, 1 << 16, &mut aux, &mut back).unwrap();
        assert_eq!(back, xs);
        assert_eq!(aux, before);
    }
}
