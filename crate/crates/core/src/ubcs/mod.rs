//! Uniform base conversion coder.
//!
//! The state `c` is a mixed-radix number kept in `[2^M, 2^(K+M))`. Encoding
//! `s ~ U(0, R)` appends one base-`R` digit, flushing the low `K` bits to a
//! stack of words whenever the state overflows. Decoding is the exact
//! reverse, so symbols come back in first-in-last-out order.

mod bench;
mod rans;

pub use bench::{bench_bandwidth, BandwidthReport, CoderKind};
pub use rans::RansState;

use crate::error::{Error, Result};

/// Word width `K` and normalization exponent `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CoderParams {
    word_bits: u32,
    norm_bits: u32,
}

impl Default for CoderParams {
    fn default() -> Self {
        CoderParams {
            word_bits: 32,
            norm_bits: 4,
        }
    }
}

impl CoderParams {
    pub fn new(word_bits: u32, norm_bits: u32) -> Result<Self> {
        if !(1..=32).contains(&word_bits) {
            return Err(Error::Parameter(format!(
                "word width K={word_bits} must lie in [1, 32]"
            )));
        }
        if word_bits + norm_bits > 60 {
            return Err(Error::Parameter(format!(
                "K+M={} leaves no headroom in a 64-bit state",
                word_bits + norm_bits
            )));
        }
        Ok(CoderParams {
            word_bits,
            norm_bits,
        })
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn norm_bits(&self) -> u32 {
        self.norm_bits
    }

    /// Lower end of the state interval, `2^M`.
    pub fn state_lo(&self) -> u64 {
        1 << self.norm_bits
    }

    /// Upper end (exclusive) of the state interval, `2^(K+M)`.
    pub fn state_hi(&self) -> u64 {
        1 << (self.word_bits + self.norm_bits)
    }

    /// Largest alphabet size accepted by a single symbol, `2^K`.
    pub fn max_alphabet(&self) -> u64 {
        1u64 << self.word_bits
    }

    fn check_symbol(&self, s: u64, r: u64) -> Result<()> {
        self.check_alphabet(r)?;
        if s >= r {
            return Err(Error::Parameter(format!("symbol {s} outside [0, {r})")));
        }
        Ok(())
    }

    #[inline]
    fn check_alphabet(&self, r: u64) -> Result<()> {
        if r == 0 || r > 1u64 << self.word_bits {
            return Err(Error::Parameter(format!(
                "alphabet size {r} outside [1, 2^{}]",
                self.word_bits
            )));
        }
        Ok(())
    }
}

/// A symbol `s` drawn from `U(0, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformSymbol {
    pub s: u64,
    pub r: u64,
}

impl UniformSymbol {
    pub fn new(s: u64, r: u64) -> Result<Self> {
        if r == 0 || s >= r {
            return Err(Error::Parameter(format!("symbol {s} outside [0, {r})")));
        }
        Ok(UniformSymbol { s, r })
    }
}

/// Stack of `K`-bit words.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitStream {
    words: Vec<u32>,
}

impl BitStream {
    pub fn new() -> Self {
        BitStream::default()
    }

    pub fn from_words(words: Vec<u32>) -> Self {
        BitStream { words }
    }

    #[inline]
    pub fn push(&mut self, w: u32) {
        self.words.push(w);
    }

    #[inline]
    pub fn pop(&mut self) -> Option<u32> {
        self.words.pop()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words from bottom to top.
    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u32> {
        self.words
    }

    pub fn reserve(&mut self, n: usize) {
        self.words.reserve(n);
    }
}

/// Operations every uniform coder exposes to the flow layers.
pub trait UniformCoder {
    fn encode(&mut self, s: u64, r: u64) -> Result<()>;

    fn decode(&mut self, r: u64) -> Result<u64>;

    fn word_bits(&self) -> u32;

    /// `log₂ c + K·len(bs)` for the current state.
    fn information_bits(&self) -> f64;

    fn max_alphabet(&self) -> u64 {
        1u64 << self.word_bits()
    }

    /// Encode `s ~ U(0, n)` for any `n ≥ 1`, splitting into several digits
    /// when `n` does not fit one symbol.
    fn encode_wide(&mut self, s: u64, n: u64) -> Result<()> {
        if n == 0 || s >= n {
            return Err(Error::Parameter(format!("symbol {s} outside [0, {n})")));
        }
        if n <= self.max_alphabet() {
            return self.encode(s, n);
        }
        let lo_bits = self.word_bits() / 2;
        let base = 1u64 << lo_bits;
        self.encode(s & (base - 1), base)?;
        self.encode_wide(s >> lo_bits, n.div_ceil(base))
    }

    fn decode_wide(&mut self, n: u64) -> Result<u64> {
        if n == 0 {
            return Err(Error::Parameter("alphabet size 0".into()));
        }
        if n <= self.max_alphabet() {
            return self.decode(n);
        }
        let lo_bits = self.word_bits() / 2;
        let base = 1u64 << lo_bits;
        let hi = self.decode_wide(n.div_ceil(base))?;
        let lo = self.decode(base)?;
        let s = hi.checked_mul(base).map_or(u64::MAX, |v| v | lo);
        if s >= n {
            return Err(Error::Corrupt(format!("wide symbol {s} outside [0, {n})")));
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoderState {
    c: u64,
    params: CoderParams,
    bs: BitStream,
}

impl CoderState {
    pub fn new(params: CoderParams) -> Self {
        CoderState {
            c: params.state_lo(),
            params,
            bs: BitStream::new(),
        }
    }

    /// Rebuild a state from its parts, checking the state interval and word
    /// widths.
    pub fn from_parts(params: CoderParams, c: u64, bs: BitStream) -> Result<Self> {
        if c < params.state_lo() || c >= params.state_hi() {
            return Err(Error::Corrupt(format!(
                "coder state {c} outside [2^{}, 2^{})",
                params.norm_bits,
                params.word_bits + params.norm_bits
            )));
        }
        if params.word_bits < 32 && bs.words().iter().any(|&w| w >> params.word_bits != 0) {
            return Err(Error::Corrupt("word wider than K bits".into()));
        }
        Ok(CoderState { c, params, bs })
    }

    pub fn params(&self) -> CoderParams {
        self.params
    }

    pub fn state(&self) -> u64 {
        self.c
    }

    pub fn stream(&self) -> &BitStream {
        &self.bs
    }

    pub fn stream_mut(&mut self) -> &mut BitStream {
        &mut self.bs
    }

    pub fn into_parts(self) -> (u64, BitStream) {
        (self.c, self.bs)
    }

    /// Whether decoding a symbol with alphabet `r` pops a word.
    #[inline]
    pub fn needs_refill(&self, r: u64) -> bool {
        self.c < r << self.params.norm_bits
    }

    /// `⌈log₂ c⌉ + K·len(bs)`.
    pub fn codelength_bits(&self) -> u64 {
        ceil_log2(self.c) as u64 + self.params.word_bits as u64 * self.bs.len() as u64
    }

    /// `log₂ c + K·len(bs)`, the information content without rounding.
    pub fn information_bits(&self) -> f64 {
        (self.c as f64).log2() + self.params.word_bits as f64 * self.bs.len() as f64
    }

    #[inline]
    pub fn encode_symbol(&mut self, sym: UniformSymbol) -> Result<()> {
        self.encode(sym.s, sym.r)
    }

    /// Serialized form: word count (u64), words (u32 each), final state (u64),
    /// all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.bs.len());
        out.extend_from_slice(&(self.bs.len() as u64).to_le_bytes());
        for w in self.bs.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.c.to_le_bytes());
        out
    }

    /// Parse the serialized form, returning the state and the bytes consumed.
    pub fn from_bytes(params: CoderParams, bytes: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::Corrupt("coder payload truncated".into());
        let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| short())?;
        let body = n.checked_mul(4).and_then(|b| b.checked_add(16)).ok_or_else(short)?;
        if bytes.len() < body {
            return Err(short());
        }
        let words = bytes[8..8 + 4 * n]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let c = u64::from_le_bytes(bytes[8 + 4 * n..body].try_into().unwrap());
        Ok((CoderState::from_parts(params, c, BitStream::from_words(words))?, body))
    }
}

impl UniformCoder for CoderState {
    #[inline]
    fn encode(&mut self, s: u64, r: u64) -> Result<()> {
        self.params.check_symbol(s, r)?;
        let k = self.params.word_bits;
        let y = self.c as u128 * r as u128 + s as u128;
        if y >= self.params.state_hi() as u128 {
            self.bs.push((y as u64 & ((1u64 << k) - 1)) as u32);
            self.c = (y >> k) as u64;
        } else {
            self.c = y as u64;
        }
        Ok(())
    }

    #[inline]
    fn decode(&mut self, r: u64) -> Result<u64> {
        self.params.check_alphabet(r)?;
        if self.needs_refill(r) {
            let w = self.bs.pop().ok_or(Error::Underflow)? as u64;
            // (c·2^K + w) / R by long division, without a 128-bit divide
            let k = self.params.word_bits;
            let q1 = self.c / r;
            let r1 = self.c % r;
            let t = (r1 << k) | w;
            let s = t % r;
            self.c = (q1 << k) + t / r;
            Ok(s)
        } else {
            let s = self.c % r;
            self.c /= r;
            Ok(s)
        }
    }

    fn word_bits(&self) -> u32 {
        self.params.word_bits
    }

    fn information_bits(&self) -> f64 {
        CoderState::information_bits(self)
    }

    fn max_alphabet(&self) -> u64 {
        self.params.max_alphabet()
    }
}

pub(crate) fn ceil_log2(c: u64) -> u32 {
    if c <= 1 {
        0
    } else {
        64 - (c - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> CoderParams {
        CoderParams::new(3, 2).unwrap()
    }

    #[test]
    fn encode_examples() {
        let mut st = CoderState::new(CoderParams::default());
        assert_eq!(st.state(), 16);
        st.encode(3, 5).unwrap();
        assert_eq!(st.state(), 83);
        assert!(st.stream().is_empty());

        let mut st = CoderState::from_parts(small(), 20, BitStream::new()).unwrap();
        st.encode(2, 5).unwrap();
        assert_eq!(st.state(), 12);
        assert_eq!(st.stream().words(), &[6]);
    }

    #[test]
    fn decode_example() {
        let mut st = CoderState::from_parts(small(), 12, BitStream::from_words(vec![6])).unwrap();
        assert_eq!(st.decode(5).unwrap(), 2);
        assert_eq!(st.state(), 20);
        assert!(st.stream().is_empty());
    }

    #[test]
    fn unit_alphabet_is_a_no_op() {
        let mut st = CoderState::from_parts(CoderParams::default(), 12345, BitStream::from_words(vec![1, 2])).unwrap();
        let before = st.clone();
        st.encode(0, 1).unwrap();
        assert_eq!(st, before);
        assert_eq!(st.decode(1).unwrap(), 0);
        assert_eq!(st, before);
    }

    #[test]
    fn parameter_errors() {
        let mut st = CoderState::new(CoderParams::default());
        assert!(matches!(st.encode(0, 0), Err(Error::Parameter(_))));
        assert!(matches!(st.encode(0, (1 << 32) + 1), Err(Error::Parameter(_))));
        assert!(matches!(st.encode(5, 5), Err(Error::Parameter(_))));
        assert!(matches!(st.decode(0), Err(Error::Parameter(_))));
        let mut st = CoderState::new(small());
        assert!(matches!(st.encode(0, 9), Err(Error::Parameter(_))));
        assert!(st.encode(6, 7).is_ok());
    }

    #[test]
    fn full_word_alphabet_round_trips() {
        for p in [small(), CoderParams::default()] {
            let r = p.max_alphabet();
            let mut st = CoderState::new(p);
            let syms = [0, r - 1, r / 2, 1, r - 1, 0, 3];
            for &s in &syms {
                st.encode(s, r).unwrap();
            }
            for &s in syms.iter().rev() {
                assert_eq!(st.decode(r).unwrap(), s);
            }
            assert_eq!(st, CoderState::new(p));
        }
    }

    #[test]
    fn underflow_on_empty_stream() {
        let mut st = CoderState::new(CoderParams::default());
        assert!(matches!(st.decode(1 << 20), Err(Error::Underflow)));
    }

    #[test]
    fn codelength_fresh_and_binary_run() {
        let p = CoderParams::default();
        let mut st = CoderState::new(p);
        assert_eq!(st.codelength_bits(), 4);
        for i in 0..1000 {
            st.encode(i % 2, 2).unwrap();
        }
        let grown = st.codelength_bits() - 4;
        let slack = 1.0 / (std::f64::consts::LN_2 * 16.0);
        assert!(grown >= 1000 && grown as f64 <= 1001.0 + slack + 1.0, "{grown}");
    }

    #[test]
    fn random_round_trip_with_snapshots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = CoderParams::default();
        let mut st = CoderState::new(p);
        let mut syms = Vec::new();
        let mut snaps = Vec::new();
        for _ in 0..20_000 {
            let r = rng.gen_range(1..=p.max_alphabet());
            let s = rng.gen_range(0..r);
            snaps.push(st.clone());
            st.encode(s, r).unwrap();
            assert!(st.state() >= p.state_lo() && st.state() < p.state_hi());
            syms.push((s, r));
        }
        for (&(s, r), snap) in syms.iter().zip(&snaps).rev() {
            assert_eq!(st.decode(r).unwrap(), s);
            assert_eq!(&st, snap);
        }
    }

    #[test]
    fn wide_symbols_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for params in [CoderParams::default(), small(), CoderParams::new(16, 4).unwrap()] {
            let mut st = CoderState::new(params);
            let mut syms = Vec::new();
            for _ in 0..2000 {
                let shift = rng.gen_range(0..63);
                let n = rng.gen_range(1..=u64::MAX >> shift);
                let s = rng.gen_range(0..n);
                st.encode_wide(s, n).unwrap();
                syms.push((s, n));
            }
            for &(s, n) in syms.iter().rev() {
                assert_eq!(st.decode_wide(n).unwrap(), s);
            }
            assert_eq!(st, CoderState::new(params));
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut st = CoderState::new(CoderParams::default());
        for i in 0..100u64 {
            st.encode(i, 1000).unwrap();
        }
        let bytes = st.to_bytes();
        assert_eq!(bytes.len(), 16 + 4 * st.stream().len());
        let (back, used) = CoderState::from_bytes(CoderParams::default(), &bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, st);
        for cut in [0, 7, 8, bytes.len() - 1] {
            assert!(CoderState::from_bytes(CoderParams::default(), &bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(
            CoderState::from_bytes(CoderParams::default(), &bad),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn independent_states_commute() {
        let p = CoderParams::default();
        let mut a1 = CoderState::new(p);
        let mut b1 = CoderState::new(p);
        let mut a2 = CoderState::new(p);
        let mut b2 = CoderState::new(p);
        for i in 1..500u64 {
            a1.encode(i % 7, 7 + i).unwrap();
            b1.encode(i % 3, 3 + 2 * i).unwrap();
        }
        for i in 1..500u64 {
            b2.encode(i % 3, 3 + 2 * i).unwrap();
        }
        for i in 1..500u64 {
            a2.encode(i % 7, 7 + i).unwrap();
        }
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
    }
}
