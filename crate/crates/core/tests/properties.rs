//! Property tests over the public API.

use iflow_core::codec::{decode_sample, encode_sample, AuxStream, Dequantizer, FlowDequantizer};
use iflow_core::elemflow::{elem_forward, elem_inverse, FnKind, MonotoneFn};
use iflow_core::fixedq::{quantize_mantissa, Precision};
use iflow_core::fixtures::random_model;
use iflow_core::layers::Tensor;
use iflow_core::mst::{mst_forward, mst_inverse, RationalScale};
use iflow_core::fixedq::FixedPoint;
use iflow_core::par::Exec;
use iflow_core::ubcs::{CoderParams, CoderState, RansState, UniformCoder};
use proptest::prelude::*;

fn symbols(max_r: u64) -> impl Strategy<Value = Vec<(u64, u64)>> {
    prop::collection::vec((1..=max_r).prop_flat_map(|r| (0..r, Just(r))), 0..400)
}

proptest! {
    #[test]
    fn ubcs_is_filo(syms in symbols(1 << 32), k in 1u32..=32, m in 0u32..=8) {
        let p = CoderParams::new(k, m).unwrap();
        let syms: Vec<(u64, u64)> = syms.into_iter().map(|(s, r)| {
            let r = r.min(p.max_alphabet());
            (s % r, r)
        }).collect();
        let mut st = CoderState::new(p);
        for &(s, r) in &syms {
            st.encode(s, r).unwrap();
        }
        for &(s, r) in syms.iter().rev() {
            prop_assert_eq!(st.decode(r).unwrap(), s);
        }
        prop_assert_eq!(st, CoderState::new(p));
    }

    #[test]
    fn rans_is_filo(syms in symbols(1 << 16)) {
        let mut st = RansState::new(CoderParams::default());
        for &(s, r) in &syms {
            st.encode(s, r).unwrap();
        }
        for &(s, r) in syms.iter().rev() {
            prop_assert_eq!(st.decode(r).unwrap(), s);
        }
    }

    #[test]
    fn serialized_state_resumes(syms in symbols(1 << 20)) {
        let p = CoderParams::default();
        let mut st = CoderState::new(p);
        for &(s, r) in &syms {
            st.encode(s, r).unwrap();
        }
        let bytes = st.to_bytes();
        let (mut back, used) = CoderState::from_bytes(p, &bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        for &(s, r) in syms.iter().rev() {
            prop_assert_eq!(back.decode(r).unwrap(), s);
        }
    }

    #[test]
    fn mst_restores_stream(xs in prop::collection::vec(-(1i64 << 40)..(1 << 40), 1..50), r in 1u64..5000, s in 1u64..5000, seed in any::<u64>()) {
        let scale = RationalScale::new(r, s).unwrap();
        let mut aux = AuxStream::new(CoderParams::default(), seed, 0);
        let zs: Vec<FixedPoint> = xs.iter().map(|&x| mst_forward(FixedPoint::from_integer(x, 20), scale, &mut aux).unwrap()).collect();
        for (z, &x) in zs.iter().zip(&xs).rev() {
            prop_assert_eq!(mst_inverse(*z, scale, &mut aux).unwrap().to_integer(), x);
        }
        prop_assert!(aux.verify_restored().is_ok());
    }

    #[test]
    fn elementwise_round_trip(us in prop::collection::vec(0.0f64..1.0, 1..60), which in 0usize..4, h in 8u32..14, seed in any::<u64>()) {
        let f = match which {
            0 => MonotoneFn::new(FnKind::Sigmoid).with_domain(-8.0, 8.0),
            1 => MonotoneFn::new(FnKind::Logit).with_domain(0.02, 0.98),
            2 => MonotoneFn::new(FnKind::Exp).with_domain(-3.0, 3.0),
            _ => MonotoneFn::affine(-1.7, 0.25),
        };
        let prec = Precision::new(28, h, 1 << 16, 1).unwrap();
        let (lo, hi) = if which == 3 { (-100.0, 100.0) } else { f.domain };
        let mut aux = AuxStream::new(CoderParams::default(), seed, 0);
        let xs: Vec<i64> = us.iter().map(|u| quantize_mantissa(lo + u * (hi - lo) * 0.999, 28).unwrap()).collect();
        let zs: Vec<i64> = xs.iter().map(|&x| elem_forward(x, &f, &prec, &mut aux).unwrap()).collect();
        for (&z, &x) in zs.iter().zip(&xs).rev() {
            prop_assert_eq!(elem_inverse(z, &f, &prec, &mut aux).unwrap(), x);
        }
        prop_assert!(aux.verify_restored().is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codec_round_trip(seed in 0u64..1000, channels in 1usize..5, positions in 1usize..20, b in 1u32..5, flow in any::<bool>(), n in 1usize..6) {
        let prec = Precision::new(28, 12, 1 << 16, b).unwrap();
        let model = random_model(seed, channels, 4, prec).unwrap();
        let deq = if flow { Dequantizer::Flow(FlowDequantizer::default()) } else { Dequantizer::Uniform };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let xs: Vec<Tensor> = (0..n).map(|_| iflow_core::fixtures::random_bytes(&mut rng, channels, positions)).collect();
        let mut aux = AuxStream::new(CoderParams::default(), seed, 1);
        for x in &xs {
            encode_sample(x, &model, &deq, (0, 256), &mut aux, Exec::Parallel).unwrap();
        }
        for x in xs.iter().rev() {
            let got = decode_sample(channels, positions, &model, &deq, (0, 256), &mut aux, Exec::Parallel).unwrap();
            prop_assert_eq!(&got, x);
        }
        prop_assert!(aux.verify_restored().is_ok());
    }
}
