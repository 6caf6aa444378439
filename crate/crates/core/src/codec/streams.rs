use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ubcs::{BitStream, CoderParams, CoderState, UniformCoder};

/// A coder whose stream rests on an endless run of pseudo-random words.
///
/// Word `i` below the starting top is word `i` of ChaCha8 keyed by `seed`
/// on stream `index`. Words are only produced when a decode runs dry, so the
/// stream holds just what was written above the lowest point reached; the
/// number of words taken from the seeded run is `borrowed`.
#[derive(Clone, Debug)]
pub struct AuxStream {
    state: CoderState,
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
    borrowed: u64,
    mark: f64,
    low: f64,
    timing: Option<Duration>,
}

fn word_source(seed: u64, index: u64, pos: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.set_word_pos(pos as u128);
    rng
}

fn mask(params: CoderParams) -> u32 {
    (((1u64 << params.word_bits()) - 1) & 0xffff_ffff) as u32
}

impl AuxStream {
    pub fn new(params: CoderParams, seed: u64, index: u64) -> Self {
        let state = CoderState::new(params);
        let info = state.information_bits();
        AuxStream {
            state,
            seed,
            index,
            rng: word_source(seed, index, 0),
            borrowed: 0,
            mark: info,
            low: info,
            timing: None,
        }
    }

    /// Resume a stream from a container record.
    pub fn from_parts(params: CoderParams, seed: u64, index: u64, borrowed: u64, state: CoderState) -> Result<Self> {
        if state.params() != params {
            return Err(Error::Corrupt("stream coder parameters differ from the header".into()));
        }
        let mut s = AuxStream::new(params, seed, index);
        s.rng = word_source(seed, index, borrowed);
        s.borrowed = borrowed;
        s.state = state;
        s.mark();
        Ok(s)
    }

    /// The first `n` seeded words, nearest the top first.
    pub fn initial_words(params: CoderParams, seed: u64, index: u64, n: u64) -> Vec<u32> {
        let mut rng = word_source(seed, index, 0);
        let m = mask(params);
        (0..n).map(|_| rng.next_u32() & m).collect()
    }

    pub fn params(&self) -> CoderParams {
        self.state.params()
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn borrowed(&self) -> u64 {
        self.borrowed
    }

    pub fn state(&self) -> &CoderState {
        &self.state
    }

    pub fn into_parts(self) -> (u64, CoderState) {
        (self.borrowed, self.state)
    }

    /// Information relative to the untouched seeded run.
    pub fn info(&self) -> f64 {
        self.state.information_bits() - self.params().word_bits() as f64 * self.borrowed as f64
    }

    /// Start a new peak measurement at the current position.
    pub fn mark(&mut self) {
        self.mark = self.info();
        self.low = self.mark;
    }

    /// Largest drop below the last mark, in bits.
    pub fn peak_since_mark(&self) -> f64 {
        self.mark - self.low
    }

    /// Accumulate wall time spent inside coder calls.
    pub fn enable_timing(&mut self) {
        self.timing.get_or_insert(Duration::ZERO);
    }

    pub fn coder_time(&self) -> Duration {
        self.timing.unwrap_or_default()
    }

    /// After decoding everything, the stream must be exactly the seeded
    /// start: the borrowed words back on top and the state at `2^M`.
    pub fn verify_restored(&self) -> Result<()> {
        let params = self.params();
        let words = self.state.stream().words();
        // compare lengths first: a damaged count must not drive an allocation
        let restored = self.state.state() == params.state_lo()
            && words.len() as u64 == self.borrowed
            && words
                .iter()
                .rev()
                .eq(AuxStream::initial_words(params, self.seed, self.index, self.borrowed).iter());
        if !restored {
            return Err(Error::Corrupt(format!(
                "stream {} did not return to its initial content",
                self.index
            )));
        }
        Ok(())
    }

    #[inline]
    fn borrow_if_needed(&mut self, r: u64) {
        if self.state.needs_refill(r) && self.state.stream().is_empty() {
            let w = self.rng.next_u32() & mask(self.params());
            self.state.stream_mut().push(w);
            self.borrowed += 1;
        }
    }
}

impl UniformCoder for AuxStream {
    #[inline]
    fn encode(&mut self, s: u64, r: u64) -> Result<()> {
        match self.timing.as_mut() {
            None => self.state.encode(s, r),
            Some(t) => {
                let t0 = Instant::now();
                let out = self.state.encode(s, r);
                *t += t0.elapsed();
                out
            }
        }
    }

    #[inline]
    fn decode(&mut self, r: u64) -> Result<u64> {
        let t0 = self.timing.map(|_| Instant::now());
        self.borrow_if_needed(r);
        let s = self.state.decode(r)?;
        let info = self.info();
        if info < self.low {
            self.low = info;
        }
        if let (Some(t), Some(t0)) = (self.timing.as_mut(), t0) {
            *t += t0.elapsed();
        }
        Ok(s)
    }

    fn word_bits(&self) -> u32 {
        self.params().word_bits()
    }

    fn information_bits(&self) -> f64 {
        self.info()
    }

    fn max_alphabet(&self) -> u64 {
        self.params().max_alphabet()
    }
}

/// Independent auxiliary streams sharing one seed.
#[derive(Clone, Debug)]
pub struct AuxStreamSet {
    pub streams: Vec<AuxStream>,
    pub seed: u64,
    /// Seeded words available per stream; borrowing more is an error.
    pub initial_fill: u64,
}

impl AuxStreamSet {
    pub fn new(params: CoderParams, seed: u64, count: usize, initial_fill: u64) -> Self {
        AuxStreamSet {
            streams: (0..count as u64).map(|i| AuxStream::new(params, seed, i)).collect(),
            seed,
            initial_fill,
        }
    }

    /// Fails when any stream drew more seeded words than `initial_fill`.
    pub fn check_budget(&self) -> Result<()> {
        check_budget(self.streams.iter(), self.initial_fill)
    }
}

pub(crate) fn check_budget<'a>(streams: impl Iterator<Item = &'a AuxStream>, fill: u64) -> Result<()> {
    let mut worst = 0;
    let mut word_bits = 32;
    for s in streams {
        worst = worst.max(s.borrowed().saturating_sub(fill));
        word_bits = s.params().word_bits();
    }
    if worst > 0 {
        return Err(Error::InsufficientAuxBits {
            shortfall_words: worst,
            word_bits,
        });
    }
    Ok(())
}

impl Default for AuxStream {
    fn default() -> Self {
        AuxStream::new(CoderParams::default(), 0, 0)
    }
}

/// A plain coder state holding `n` seeded words, for tests that want a
/// concrete pre-filled stream.
pub fn seeded_state(params: CoderParams, seed: u64, index: u64, n: u64) -> CoderState {
    let mut words = AuxStream::initial_words(params, seed, index, n);
    words.reverse();
    CoderState::from_parts(params, params.state_lo(), BitStream::from_words(words)).expect("seeded words fit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn borrowing_matches_a_prefilled_stream() {
        let p = CoderParams::default();
        let mut lazy = AuxStream::new(p, 7, 3);
        let mut full = seeded_state(p, 7, 3, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let r = rng.gen_range(1..1u64 << 20);
            assert_eq!(lazy.decode(r).unwrap(), full.decode(r).unwrap());
        }
        assert_eq!(lazy.state().state(), full.state());
        let left = full.stream().len() as u64;
        assert_eq!(lazy.borrowed(), 200 - left);
        assert!((lazy.info() - (full.information_bits() - 200.0 * 32.0)).abs() < 1e-6);
    }

    #[test]
    fn round_trip_restores_and_verifies() {
        let p = CoderParams::new(12, 3).unwrap();
        let mut a = AuxStream::new(p, 99, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rs: Vec<u64> = (0..500).map(|_| rng.gen_range(1..4000)).collect();
        let got: Vec<u64> = rs.iter().map(|&r| a.decode(r).unwrap()).collect();
        assert!(a.peak_since_mark() > 100.0);
        let (borrowed, state) = a.into_parts();
        let mut b = AuxStream::from_parts(p, 99, 0, borrowed, state).unwrap();
        for (&r, &s) in rs.iter().zip(&got).rev() {
            b.encode(s, r).unwrap();
        }
        b.verify_restored().unwrap();
        b.encode(1, 3).unwrap();
        assert!(b.verify_restored().is_err());
    }

    #[test]
    fn budget_reports_shortfall() {
        let mut set = AuxStreamSet::new(CoderParams::default(), 1, 2, 3);
        for _ in 0..10 {
            set.streams[1].decode(1 << 31).unwrap();
        }
        match set.check_budget().unwrap_err() {
            Error::InsufficientAuxBits { shortfall_words, word_bits } => {
                assert_eq!(word_bits, 32);
                assert_eq!(shortfall_words, set.streams[1].borrowed() - 3);
            }
            e => panic!("{e}"),
        }
    }
}
