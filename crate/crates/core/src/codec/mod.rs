//! End-to-end lossless coding with bits-back dequantization.
//!
//! One sample is coded as: decode the latent `v̄` from `q(v̄|x°)`, encode
//! `x°` under `P(x°|v̄)`, push `v̄` through the flow and encode the result
//! under the prior. The decoder undoes the steps in reverse. Samples share a
//! stream in FILO order; independent streams carry separate groups of
//! samples and run in parallel.

mod container;
mod dequant;
mod streams;

pub use container::{Container, StreamRecord, MAGIC, VERSION};
pub use dequant::{
    Bernoulli, Dequantizer, Floor, FlowDequantizer, LogisticPosterior, ObservationCoder, PosteriorCoder,
    BERNOULLI_SLOT_BITS,
};
pub use streams::{seeded_state, AuxStream, AuxStreamSet};

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedq::mantissa_to_f64;
use crate::layers::Tensor;
use crate::model::{CodelengthReport, FlowModel};
use crate::par::Exec;
use crate::ubcs::{CoderParams, UniformCoder};

/// Outcome of coding one sample.
#[derive(Clone, Debug)]
pub struct SampleReport {
    pub codelength: CodelengthReport,
    /// The latent `v̄` the sample was lifted to, at precision `k`.
    pub latent: Tensor,
}

/// Encode one sample under an arbitrary posterior and observation model.
pub fn generic_bitsback_encode<Q, P>(
    x: &Tensor,
    q: &Q,
    p: &P,
    model: &FlowModel,
    aux: &mut AuxStream,
    exec: Exec,
) -> Result<SampleReport>
where
    Q: PosteriorCoder,
    P: ObservationCoder,
{
    let prec = model.precision();
    model.check_shape(x.channels())?;
    aux.mark();
    let start = aux.information_bits();
    let v = q.decode_latent(x, prec, aux, exec)?;
    let refund = start - aux.information_bits();
    let before = aux.information_bits();
    p.encode_data(x, &v, prec, aux)?;
    let observation = aux.information_bits() - before;
    let mut r = model.encode(v.clone(), aux, exec)?;
    r.refund_bits = refund;
    r.observation_bits = observation;
    r.aux_bits_required = aux.peak_since_mark();
    r.finish();
    Ok(SampleReport {
        codelength: r,
        latent: v,
    })
}

/// Inverse of [`generic_bitsback_encode`].
pub fn generic_bitsback_decode<Q, P>(
    channels: usize,
    positions: usize,
    q: &Q,
    p: &P,
    model: &FlowModel,
    aux: &mut AuxStream,
    exec: Exec,
) -> Result<Tensor>
where
    Q: PosteriorCoder,
    P: ObservationCoder,
{
    let prec = model.precision();
    let v = model.decode(channels, positions, aux, exec)?;
    let x = p.decode_data(&v, prec, aux)?;
    q.encode_latent(&x, &v, prec, aux, exec)?;
    Ok(x)
}

fn check_range(x: &Tensor, range: (i64, i64)) -> Result<()> {
    if let Some(v) = x.data().iter().find(|&&v| v < range.0 || v >= range.1) {
        return Err(Error::Domain(format!(
            "data value {v} outside the declared range [{}, {})",
            range.0, range.1
        )));
    }
    Ok(())
}

/// Encode integer data `x°` with bits-back dequantization.
pub fn encode_sample(
    x: &Tensor,
    model: &FlowModel,
    deq: &Dequantizer,
    range: (i64, i64),
    aux: &mut AuxStream,
    exec: Exec,
) -> Result<SampleReport> {
    check_range(x, range)?;
    generic_bitsback_encode(x, deq, &Floor, model, aux, exec)
}

pub fn decode_sample(
    channels: usize,
    positions: usize,
    model: &FlowModel,
    deq: &Dequantizer,
    range: (i64, i64),
    aux: &mut AuxStream,
    exec: Exec,
) -> Result<Tensor> {
    let x = generic_bitsback_decode(channels, positions, deq, &Floor, model, aux, exec)?;
    check_range(&x, range).map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(x)
}

/// The bound the coder should reach for one sample: `Σ −log₂ p_X(v̄) +
/// log₂ q(v̄|x°) − log₂ P(x°|v̄)`, evaluated with the continuous densities.
pub fn elbo_bits<Q: PosteriorCoder, P: ObservationCoder>(
    x: &Tensor,
    latent: &Tensor,
    q: &Q,
    p: &P,
    model: &FlowModel,
) -> f64 {
    let k = model.precision().k;
    let v: Vec<f64> = latent.data().iter().map(|&m| mantissa_to_f64(m, k)).collect();
    let log_px = model.log_density(&v, latent.positions());
    let log_q: f64 = x.data().iter().zip(&v).map(|(&xi, &vi)| q.log_density(xi, vi)).sum();
    let log_p: f64 = x.data().iter().zip(&v).map(|(&xi, &vi)| p.log_prob(xi, vi)).sum();
    (log_q - log_px - log_p) / std::f64::consts::LN_2
}

#[derive(Clone, Debug)]
pub struct CodecConfig {
    pub dequantizer: Dequantizer,
    /// Integer range `[lo, hi)` of the data.
    pub range: (i64, i64),
    pub seed: u64,
    /// Seeded words available per stream.
    pub initial_fill: u64,
    /// Number of independent streams; samples are split into this many
    /// contiguous groups.
    pub streams: usize,
    pub coder: CoderParams,
    pub metadata: Vec<u8>,
    /// Measure time spent inside coder calls.
    pub timing: bool,
}

pub const DEFAULT_INITIAL_FILL: u64 = 1 << 24;

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            dequantizer: Dequantizer::Uniform,
            range: (0, 256),
            seed: 0,
            initial_fill: DEFAULT_INITIAL_FILL,
            streams: 1,
            coder: CoderParams::default(),
            metadata: Vec::new(),
            timing: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CompressReport {
    /// Totals over all samples.
    pub codelength: CodelengthReport,
    pub samples: usize,
    /// Largest number of seeded words any stream drew.
    pub borrowed_words: u64,
    /// Mean over samples of the peak auxiliary draw, per dimension.
    pub aux_bits_per_dim: f64,
    pub container_bytes: usize,
    /// Thread-seconds spent inside coder calls (zero unless timing).
    pub coding_seconds: f64,
    /// Thread-seconds spent elsewhere while coding streams.
    pub inference_seconds: f64,
    pub wall_seconds: f64,
}

/// Contiguous group sizes for `n` samples over `s` streams.
fn group_sizes(n: usize, s: usize) -> Vec<usize> {
    let s = s.clamp(1, n.max(1));
    (0..s).map(|j| n / s + usize::from(j < n % s)).collect()
}

struct StreamOutcome {
    stream: AuxStream,
    reports: Vec<CodelengthReport>,
    coder: Duration,
    wall: Duration,
}

/// Compress a batch of equally shaped samples.
pub fn compress(samples: &[Tensor], model: &FlowModel, cfg: &CodecConfig, exec: Exec) -> Result<(Container, CompressReport)> {
    let t0 = Instant::now();
    cfg.dequantizer.validate()?;
    if cfg.range.0 >= cfg.range.1 {
        return Err(Error::Parameter("empty data range".into()));
    }
    let (channels, positions) = samples
        .first()
        .map_or((model.channels().unwrap_or(1), 0), |s| (s.channels(), s.positions()));
    if samples.iter().any(|s| s.channels() != channels || s.positions() != positions) {
        return Err(Error::Parameter("all samples must share one shape".into()));
    }
    let sizes = group_sizes(samples.len(), cfg.streams);
    let mut groups = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for (j, &n) in sizes.iter().enumerate() {
        groups.push((j, &samples[at..at + n]));
        at += n;
    }
    let outcomes = exec
        .map_tasks(&groups, |&(j, group)| -> Result<StreamOutcome> {
            let start = Instant::now();
            let mut aux = AuxStream::new(cfg.coder, cfg.seed, j as u64);
            if cfg.timing {
                aux.enable_timing();
            }
            let mut reports = Vec::with_capacity(group.len());
            for x in group {
                reports.push(encode_sample(x, model, &cfg.dequantizer, cfg.range, &mut aux, exec)?.codelength);
            }
            Ok(StreamOutcome {
                coder: aux.coder_time(),
                stream: aux,
                reports,
                wall: start.elapsed(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    streams::check_budget(outcomes.iter().map(|o| &o.stream), cfg.initial_fill)?;

    let all: Vec<&CodelengthReport> = outcomes.iter().flat_map(|o| &o.reports).collect();
    let aux_per_dim = if all.is_empty() {
        0.0
    } else {
        all.iter().map(|r| r.aux_bits_required / r.dims.max(1) as f64).sum::<f64>() / all.len() as f64
    };
    let coding: Duration = outcomes.iter().map(|o| o.coder).sum();
    let busy: Duration = outcomes.iter().map(|o| o.wall).sum();
    let mut report = CompressReport {
        codelength: CodelengthReport::sum(all.iter().copied()),
        samples: samples.len(),
        borrowed_words: outcomes.iter().map(|o| o.stream.borrowed()).max().unwrap_or(0),
        aux_bits_per_dim: aux_per_dim,
        coding_seconds: coding.as_secs_f64(),
        inference_seconds: busy.saturating_sub(coding).as_secs_f64(),
        ..Default::default()
    };
    let container = Container {
        model_hash: model.content_hash(),
        precision: *model.precision(),
        coder: cfg.coder,
        channels: channels as u64,
        positions: positions as u64,
        range: cfg.range,
        dequantizer: cfg.dequantizer,
        seed: cfg.seed,
        initial_fill: cfg.initial_fill,
        streams: outcomes
            .into_iter()
            .zip(&sizes)
            .map(|(o, &n)| {
                let (borrowed, state) = o.stream.into_parts();
                StreamRecord {
                    samples: n as u64,
                    borrowed,
                    state,
                }
            })
            .collect(),
        metadata: cfg.metadata.clone(),
    };
    report.container_bytes = container.to_bytes().len();
    report.wall_seconds = t0.elapsed().as_secs_f64();
    Ok((container, report))
}

fn hex(bytes: &[u8]) -> String {
    crate::model::hex_string(bytes)
}

/// Any failure while decoding a container that matched its model means the
/// payload is damaged.
fn as_corrupt(e: Error, stream: usize, sample: u64) -> Error {
    match e {
        Error::Corrupt(_) => e,
        e => Error::Corrupt(format!("stream {stream}, sample {sample}: {e}")),
    }
}

/// Recover the samples of a container, in their original order.
pub fn decompress(container: &Container, model: &FlowModel, exec: Exec) -> Result<Vec<Tensor>> {
    if container.model_hash != model.content_hash() {
        return Err(Error::HashMismatch {
            expected: hex(&container.model_hash),
            found: model.hash_hex(),
        });
    }
    if container.precision != *model.precision() {
        return Err(Error::Corrupt("container precision differs from the model".into()));
    }
    let channels = usize::try_from(container.channels).map_err(|_| Error::Corrupt("shape".into()))?;
    let positions = usize::try_from(container.positions).map_err(|_| Error::Corrupt("shape".into()))?;
    if channels.checked_mul(positions).is_none_or(|d| d > 1 << 40) {
        return Err(Error::Corrupt("implausible sample shape".into()));
    }
    model.check_shape(channels).map_err(|e| Error::Corrupt(e.to_string()))?;
    let records: Vec<(usize, &StreamRecord)> = container.streams.iter().enumerate().collect();
    let groups = exec
        .map_tasks(&records, |&(j, rec)| -> Result<Vec<Tensor>> {
            let mut aux = AuxStream::from_parts(
                container.coder,
                container.seed,
                j as u64,
                rec.borrowed,
                rec.state.clone(),
            )?;
            let mut out = Vec::new();
            for i in 0..rec.samples {
                let x = decode_sample(
                    channels,
                    positions,
                    model,
                    &container.dequantizer,
                    container.range,
                    &mut aux,
                    exec,
                )
                .map_err(|e| as_corrupt(e, j, i))?;
                out.push(x);
            }
            aux.verify_restored()?;
            out.reverse();
            Ok(out)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Mean peak auxiliary draw per dimension when each sample is coded on a
/// fresh stream.
pub fn measure_aux_bits(
    model: &FlowModel,
    deq: &Dequantizer,
    samples: &[Tensor],
    range: (i64, i64),
    exec: Exec,
) -> Result<f64> {
    let per: Vec<f64> = exec
        .map(samples, |x| -> Result<f64> {
            let mut aux = AuxStream::new(CoderParams::default(), 0, 0);
            let r = encode_sample(x, model, deq, range, &mut aux, exec)?;
            Ok(r.codelength.aux_bits_required / x.len().max(1) as f64)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elemflow::MonotoneFn;
    use crate::fixedq::Precision;
    use crate::layers::Prior;
    use crate::model::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bytes(rng: &mut ChaCha8Rng, c: usize, p: usize) -> Tensor {
        Tensor::new(c, p, (0..c * p).map(|_| rng.gen_range(0..256)).collect()).unwrap()
    }

    fn small_model() -> FlowModel {
        let layers = vec![
            LayerSpec::elementwise(&[MonotoneFn::affine(1.0 / 64.0, -2.0)]),
            LayerSpec::conv1x1(&[
                vec![0.9, 0.2, -0.1],
                vec![-0.3, 1.0, 0.2],
                vec![0.1, 0.1, 1.1],
            ]),
        ];
        FlowModel::new(Precision::default(), &Prior::default(), layers).unwrap()
    }

    #[test]
    fn identity_uniform_costs_eight_bits() {
        let m = FlowModel::new(Precision::default(), &Prior::Uniform { lo: 0.0, hi: 256.0 }, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = bytes(&mut rng, 3, 64);
        let mut aux = AuxStream::default();
        let r = encode_sample(&x, &m, &Dequantizer::Uniform, (0, 256), &mut aux, Exec::Sequential).unwrap();
        assert!((r.codelength.bpd - 8.0).abs() < 1e-9, "{}", r.codelength.bpd);
        assert!((r.codelength.aux_bits_required / 192.0 - 28.0).abs() < 0.5);
        let back = decode_sample(3, 64, &m, &Dequantizer::Uniform, (0, 256), &mut aux, Exec::Sequential).unwrap();
        assert_eq!(back, x);
        aux.verify_restored().unwrap();
    }

    #[test]
    fn samples_come_back_in_reverse() {
        let m = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Tensor> = (0..64).map(|_| bytes(&mut rng, 3, 4)).collect();
        let mut aux = AuxStream::new(CoderParams::default(), 5, 0);
        for x in &xs {
            encode_sample(x, &m, &Dequantizer::Uniform, (0, 256), &mut aux, Exec::Sequential).unwrap();
        }
        for x in xs.iter().rev() {
            let got = decode_sample(3, 4, &m, &Dequantizer::Uniform, (0, 256), &mut aux, Exec::Sequential).unwrap();
            assert_eq!(&got, x);
        }
        aux.verify_restored().unwrap();
    }

    #[test]
    fn out_of_range_is_an_error() {
        let m = small_model();
        let x = Tensor::new(3, 1, vec![0, 256, 3]).unwrap();
        let e = encode_sample(&x, &m, &Dequantizer::Uniform, (0, 256), &mut AuxStream::default(), Exec::Sequential);
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn flow_dequantizer_round_trip_and_bound() {
        let m = small_model();
        let deq = Dequantizer::Flow(FlowDequantizer::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut aux = AuxStream::default();
        let mut gap = 0.0;
        let mut dims = 0;
        let xs: Vec<Tensor> = (0..20).map(|_| bytes(&mut rng, 3, 50)).collect();
        for x in &xs {
            let r = encode_sample(x, &m, &deq, (0, 256), &mut aux, Exec::Parallel).unwrap();
            gap += r.codelength.net_bits - elbo_bits(x, &r.latent, &deq, &Floor, &m);
            dims += x.len();
        }
        assert!((gap / dims as f64).abs() < 0.01, "{}", gap / dims as f64);
        for x in xs.iter().rev() {
            assert_eq!(&decode_sample(3, 50, &m, &deq, (0, 256), &mut aux, Exec::Parallel).unwrap(), x);
        }
        aux.verify_restored().unwrap();
    }

    #[test]
    fn bernoulli_plugin_round_trip_and_bound() {
        let m = FlowModel::new(
            Precision::default(),
            &Prior::default(),
            vec![LayerSpec::channel_scale(&[0.7, 1.3])],
        )
        .unwrap();
        let q = LogisticPosterior {
            loc: [-1.0, 1.0],
            scale: 0.6,
        };
        let p = Bernoulli { weight: 2.0, bias: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut aux = AuxStream::default();
        let xs: Vec<Tensor> = (0..30)
            .map(|_| Tensor::new(2, 40, (0..80).map(|_| rng.gen_range(0..2)).collect()).unwrap())
            .collect();
        let mut gap = 0.0;
        for x in &xs {
            let r = generic_bitsback_encode(x, &q, &p, &m, &mut aux, Exec::Sequential).unwrap();
            assert!(r.codelength.observation_bits != 0.0);
            gap += r.codelength.net_bits - elbo_bits(x, &r.latent, &q, &p, &m);
        }
        assert!((gap / (30.0 * 80.0)).abs() < 0.01, "{}", gap / 2400.0);
        for x in xs.iter().rev() {
            let got = generic_bitsback_decode(2, 40, &q, &p, &m, &mut aux, Exec::Sequential).unwrap();
            assert_eq!(&got, x);
        }
        aux.verify_restored().unwrap();
    }

    #[test]
    fn compress_round_trip_over_streams() {
        let m = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Tensor> = (0..10).map(|_| bytes(&mut rng, 3, 16)).collect();
        for streams in [1, 3, 20] {
            let cfg = CodecConfig {
                streams,
                seed: 11,
                metadata: b"meta".to_vec(),
                ..Default::default()
            };
            let (c, rep) = compress(&xs, &m, &cfg, Exec::Parallel).unwrap();
            assert_eq!(c.streams.len(), streams.min(10));
            let parsed = Container::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(parsed, c);
            assert_eq!(decompress(&parsed, &m, Exec::Parallel).unwrap(), xs);
            assert_eq!(rep.samples, 10);
        }
    }

    #[test]
    fn payload_reconciles_with_net_bits() {
        let m = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Tensor> = (0..8).map(|_| bytes(&mut rng, 3, 32)).collect();
        for fill in [1 << 12, 1 << 20] {
            let cfg = CodecConfig {
                streams: 2,
                initial_fill: fill,
                ..Default::default()
            };
            let (c, rep) = compress(&xs, &m, &cfg, Exec::Sequential).unwrap();
            let k = c.coder.word_bits() as f64;
            let m_bits = c.coder.norm_bits() as f64;
            let overhead: f64 = c
                .streams
                .iter()
                .map(|s| k * s.borrowed as f64 + m_bits - (s.state.state() as f64).log2())
                .sum();
            let stored = c.payload_bits() as f64;
            assert!((stored - rep.codelength.net_bits - overhead).abs() < 1e-6);
        }
    }

    #[test]
    fn insufficient_fill_reports_shortfall() {
        let m = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = vec![bytes(&mut rng, 3, 64)];
        let cfg = CodecConfig {
            initial_fill: 10,
            ..Default::default()
        };
        match compress(&xs, &m, &cfg, Exec::Sequential).unwrap_err() {
            Error::InsufficientAuxBits { shortfall_words, .. } => assert!(shortfall_words > 100),
            e => panic!("{e}"),
        }
    }
}
