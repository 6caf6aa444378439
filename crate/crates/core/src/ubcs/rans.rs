//! Baseline range ANS coder for uniform symbols.
//!
//! Uses a total frequency `m = 2^K` with the closed-form uniform table:
//! every symbol but the last gets `⌊m/R⌋` slots and the last takes the rest.
//! The state lives in `[2^K, 2^(2K))` and is renormalized one word at a time.

use super::{ceil_log2, BitStream, CoderParams, UniformCoder};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RansState {
    x: u64,
    word_bits: u32,
    bs: BitStream,
}

impl RansState {
    pub fn new(params: CoderParams) -> Self {
        RansState {
            x: 1 << params.word_bits(),
            word_bits: params.word_bits(),
            bs: BitStream::new(),
        }
    }

    pub fn state(&self) -> u64 {
        self.x
    }

    pub fn stream(&self) -> &BitStream {
        &self.bs
    }

    pub fn stream_mut(&mut self) -> &mut BitStream {
        &mut self.bs
    }

    pub fn codelength_bits(&self) -> u64 {
        ceil_log2(self.x) as u64 + self.word_bits as u64 * self.bs.len() as u64
    }

    pub fn information_bits(&self) -> f64 {
        (self.x as f64).log2() + self.word_bits as f64 * self.bs.len() as f64
    }

    #[inline]
    fn check(&self, r: u64) -> Result<()> {
        if r == 0 || r > 1u64 << self.word_bits {
            return Err(Error::Parameter(format!(
                "alphabet size {r} outside [1, 2^{}]",
                self.word_bits
            )));
        }
        Ok(())
    }

    /// Slot count and cumulative start of symbol `s`.
    #[inline]
    fn slot(&self, s: u64, r: u64) -> (u64, u64) {
        let m = 1u64 << self.word_bits;
        let l = m / r;
        if s + 1 < r {
            (l, l * s)
        } else {
            (m - (r - 1) * l, l * (r - 1))
        }
    }
}

impl UniformCoder for RansState {
    #[inline]
    fn encode(&mut self, s: u64, r: u64) -> Result<()> {
        self.check(r)?;
        if s >= r {
            return Err(Error::Parameter(format!("symbol {s} outside [0, {r})")));
        }
        let k = self.word_bits;
        let (ls, bs) = self.slot(s, r);
        if self.x >> k >= ls {
            self.bs.push((self.x & ((1u64 << k) - 1)) as u32);
            self.x >>= k;
        }
        self.x = ((self.x / ls) << k) + self.x % ls + bs;
        Ok(())
    }

    #[inline]
    fn decode(&mut self, r: u64) -> Result<u64> {
        self.check(r)?;
        let k = self.word_bits;
        let m = 1u64 << k;
        let b = self.x & (m - 1);
        let s = (b / (m / r)).min(r - 1);
        let (ls, bs) = self.slot(s, r);
        self.x = ls * (self.x >> k) + b - bs;
        if self.x < m {
            let w = self.bs.pop().ok_or(Error::Underflow)?;
            self.x = (self.x << k) | w as u64;
        }
        Ok(s)
    }

    fn word_bits(&self) -> u32 {
        self.word_bits
    }

    fn information_bits(&self) -> f64 {
        RansState::information_bits(self)
    }
}

#[cfg(test)]
mod tests {
    use super::super::CoderState;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = CoderParams::default();
        let mut st = RansState::new(p);
        let mut syms = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let r = rng.gen_range(1..=p.max_alphabet());
            let s = rng.gen_range(0..r);
            st.encode(s, r).unwrap();
            syms.push((s, r));
        }
        for &(s, r) in syms.iter().rev() {
            assert_eq!(st.decode(r).unwrap(), s);
        }
        assert_eq!(st, RansState::new(p));
    }

    #[test]
    fn small_words_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = CoderParams::new(3, 2).unwrap();
        let mut st = RansState::new(p);
        let mut syms = Vec::new();
        for _ in 0..10_000 {
            let r = rng.gen_range(1..8);
            let s = rng.gen_range(0..r);
            st.encode(s, r).unwrap();
            syms.push((s, r));
        }
        for &(s, r) in syms.iter().rev() {
            assert_eq!(st.decode(r).unwrap(), s);
        }
        assert_eq!(st, RansState::new(p));
    }

    #[test]
    fn unit_alphabet_keeps_state() {
        let mut st = RansState::new(CoderParams::default());
        st.encode(17, 1000).unwrap();
        let before = st.clone();
        st.encode(0, 1).unwrap();
        assert_eq!(st, before);
        assert_eq!(st.decode(1).unwrap(), 0);
        assert_eq!(st, before);
    }

    #[test]
    fn codelength_close_to_ubcs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = CoderParams::default();
        let mut a = RansState::new(p);
        let mut b = CoderState::new(p);
        let a0 = a.information_bits();
        let b0 = b.information_bits();
        for _ in 0..100_000 {
            let r = rng.gen_range(2..=1u64 << 20);
            let s = rng.gen_range(0..r);
            a.encode(s, r).unwrap();
            b.encode(s, r).unwrap();
        }
        let la = a.information_bits() - a0;
        let lb = b.information_bits() - b0;
        assert!((la - lb).abs() <= 1e-3 * lb, "rans {la} ubcs {lb}");
    }

    #[test]
    fn rejects_bad_alphabet() {
        let mut st = RansState::new(CoderParams::default());
        assert!(st.encode(0, 0).is_err());
        assert!(st.encode(0, (1 << 32) + 1).is_err());
        assert!(st.encode(3, 3).is_err());
        assert!(matches!(st.decode(1000), Err(Error::Underflow)));
    }
}
