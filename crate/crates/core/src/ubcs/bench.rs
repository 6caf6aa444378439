//! Throughput harness comparing the uniform coders.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CoderParams, CoderState, RansState, UniformCoder};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoderKind {
    Ubcs,
    Rans,
}

impl CoderKind {
    pub fn name(self) -> &'static str {
        match self {
            CoderKind::Ubcs => "ubcs",
            CoderKind::Rans => "rans",
        }
    }
}

impl std::str::FromStr for CoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ubcs" => Ok(CoderKind::Ubcs),
            "rans" => Ok(CoderKind::Rans),
            _ => Err(Error::Parameter(format!("unknown coder {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BandwidthReport {
    pub coder: CoderKind,
    pub n_symbols: usize,
    pub n_streams: usize,
    pub encode_time: Duration,
    pub decode_time: Duration,
}

impl BandwidthReport {
    /// Encode bandwidth in millions of symbols per second.
    pub fn encode_msym_per_s(&self) -> f64 {
        self.n_symbols as f64 / self.encode_time.as_secs_f64() / 1e6
    }

    pub fn decode_msym_per_s(&self) -> f64 {
        self.n_symbols as f64 / self.decode_time.as_secs_f64() / 1e6
    }
}

/// Largest alphabet used by the harness; symbols are drawn with `R` uniform in
/// `[2, 2^16]`, the typical size of MST remainders.
pub const BENCH_MAX_ALPHABET: u32 = 1 << 16;

/// Encode then decode `n_symbols` random uniform symbols split evenly over
/// `n_streams` independent coder states, one per worker thread.
pub fn bench_bandwidth(
    coder: CoderKind,
    n_symbols: usize,
    n_streams: usize,
    seed: u64,
) -> Result<BandwidthReport> {
    if n_streams == 0 {
        return Err(Error::Parameter("at least one stream is required".into()));
    }
    let per = n_symbols.div_ceil(n_streams);
    let inputs: Vec<Vec<(u32, u32)>> = (0..n_streams)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = per.min(n_symbols.saturating_sub(i * per));
            (0..n)
                .map(|_| {
                    let r = rng.gen_range(2..=BENCH_MAX_ALPHABET);
                    (rng.gen_range(0..r), r)
                })
                .collect()
        })
        .collect();
    let params = CoderParams::default();
    match coder {
        CoderKind::Ubcs => run(coder, &inputs, n_symbols, || CoderState::new(params)),
        CoderKind::Rans => run(coder, &inputs, n_symbols, || RansState::new(params)),
    }
}

trait Reserve {
    fn reserve_words(&mut self, n: usize);
}

impl Reserve for CoderState {
    fn reserve_words(&mut self, n: usize) {
        self.stream_mut().reserve(n);
    }
}

impl Reserve for RansState {
    fn reserve_words(&mut self, n: usize) {
        self.stream_mut().reserve(n);
    }
}

fn run<C, F>(
    coder: CoderKind,
    inputs: &[Vec<(u32, u32)>],
    n_symbols: usize,
    fresh: F,
) -> Result<BandwidthReport>
where
    C: UniformCoder + Reserve + Send,
    F: Fn() -> C + Sync,
{
    let mut states: Vec<C> = inputs
        .iter()
        .map(|syms| {
            let mut c = fresh();
            c.reserve_words(syms.len());
            c
        })
        .collect();

    let t0 = Instant::now();
    for_each_stream(&mut states, inputs, |st, syms| {
        for &(s, r) in syms {
            st.encode(s as u64, r as u64)?;
        }
        Ok(0)
    })?;
    let encode_time = t0.elapsed();

    let t0 = Instant::now();
    let sums = for_each_stream(&mut states, inputs, |st, syms| {
        let mut acc = 0u64;
        for &(_, r) in syms.iter().rev() {
            acc = acc.wrapping_mul(31).wrapping_add(st.decode(r as u64)?);
        }
        Ok(black_box(acc))
    })?;
    let decode_time = t0.elapsed();

    for (syms, got) in inputs.iter().zip(sums) {
        let want = syms
            .iter()
            .rev()
            .fold(0u64, |acc, &(s, _)| acc.wrapping_mul(31).wrapping_add(s as u64));
        if want != got {
            return Err(Error::Corrupt("benchmark round trip mismatch".into()));
        }
    }
    Ok(BandwidthReport {
        coder,
        n_symbols,
        n_streams: inputs.len(),
        encode_time,
        decode_time,
    })
}

#[cfg(feature = "parallel")]
fn for_each_stream<C, G>(states: &mut [C], inputs: &[Vec<(u32, u32)>], f: G) -> Result<Vec<u64>>
where
    C: Send,
    G: Fn(&mut C, &[(u32, u32)]) -> Result<u64> + Sync,
{
    use rayon::prelude::*;
    if states.len() == 1 {
        return Ok(vec![f(&mut states[0], &inputs[0])?]);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(states.len())
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    pool.install(|| {
        states
            .par_iter_mut()
            .zip(inputs.par_iter())
            .map(|(st, syms)| f(st, syms))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn for_each_stream<C, G>(states: &mut [C], inputs: &[Vec<(u32, u32)>], f: G) -> Result<Vec<u64>>
where
    G: Fn(&mut C, &[(u32, u32)]) -> Result<u64>,
{
    states
        .iter_mut()
        .zip(inputs)
        .map(|(st, syms)| f(st, syms))
        .collect()
}
