use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use iflow_core::ubcs::{CoderParams, CoderState, RansState, UniformCoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 1 << 16;

fn symbols(max_r: u64) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..N)
        .map(|_| {
            let r = rng.gen_range(2..=max_r);
            (rng.gen_range(0..r), r)
        })
        .collect()
}

fn encode_all<C: UniformCoder>(st: &mut C, syms: &[(u64, u64)]) {
    for &(s, r) in syms {
        st.encode(s, r).unwrap();
    }
}

fn coders(c: &mut Criterion) {
    let p = CoderParams::default();
    let mut g = c.benchmark_group("coder");
    g.throughput(Throughput::Elements(N as u64));
    for bits in [8u32, 16, 24] {
        let syms = symbols(1 << bits);
        g.bench_with_input(BenchmarkId::new("ubcs_encode", bits), &syms, |b, syms| {
            b.iter(|| {
                let mut st = CoderState::new(p);
                encode_all(&mut st, syms);
                st
            })
        });
        g.bench_with_input(BenchmarkId::new("rans_encode", bits), &syms, |b, syms| {
            b.iter(|| {
                let mut st = RansState::new(p);
                encode_all(&mut st, syms);
                st
            })
        });
        let mut full = CoderState::new(p);
        encode_all(&mut full, &syms);
        g.bench_with_input(BenchmarkId::new("ubcs_decode", bits), &syms, |b, syms| {
            b.iter(|| {
                let mut st = full.clone();
                for &(_, r) in syms.iter().rev() {
                    st.decode(r).unwrap();
                }
                st
            })
        });
        let mut full = RansState::new(p);
        encode_all(&mut full, &syms);
        g.bench_with_input(BenchmarkId::new("rans_decode", bits), &syms, |b, syms| {
            b.iter(|| {
                let mut st = full.clone();
                for &(_, r) in syms.iter().rev() {
                    st.decode(r).unwrap();
                }
                st
            })
        });
    }
    g.finish();
}

criterion_group!(benches, coders);
criterion_main!(benches);
