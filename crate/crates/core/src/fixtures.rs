//! Small deterministic models and data used by tests, benches and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elemflow::{FnKind, MonotoneFn};
use crate::error::Result;
use crate::fixedq::Precision;
use crate::layers::{lu_decompose, Conditioner, Prior, Tensor};
use crate::model::{FlowModel, LayerSpec};

/// Values are renormalized once their bound passes this.
const RENORM_ABOVE: f64 = 4.0;

fn conditioner(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Conditioner {
    let mut mat = |r: f64| -> Vec<Vec<f64>> {
        (0..outputs)
            .map(|_| (0..inputs).map(|_| rng.gen_range(-r..r)).collect())
            .collect()
    };
    let scale_weight = mat(0.4);
    let shift_weight = mat(0.4);
    Conditioner {
        scale_weight,
        scale_bias: (0..outputs).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        shift_weight,
        shift_bias: (0..outputs).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        scale_bound: rng.gen_range(0.3..1.0),
    }
}

/// Bound on `|y|` after an affine coupling of inputs bounded by `b`.
fn coupled_bound(c: &Conditioner, b: f64) -> f64 {
    let t: f64 = (0..c.outputs())
        .map(|o| c.shift_weight[o].iter().map(|w| w.abs()).sum::<f64>() * b + c.shift_bias[o].abs())
        .fold(0.0, f64::max);
    b * c.scale_bound.exp() + t
}

fn random_conv(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    loop {
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) + rng.gen_range(-0.4..0.4)).collect())
            .collect();
        if let Ok(lu) = lu_decompose(&w) {
            if lu.log_abs_det().abs() < 1.5 {
                return w;
            }
        }
    }
}

/// A random model over `channels` channels for data in `[0, 256)`.
///
/// The model opens with an affine map onto `[-2, 2)` and then stacks
/// `n_layers` layers drawn from every kind. A running bound on `|value|`
/// keeps element-wise domains valid, and a channel scale is inserted
/// whenever that bound grows past 4, so every input in range can be coded.
pub fn random_model(seed: u64, channels: usize, n_layers: usize, precision: Precision) -> Result<FlowModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![LayerSpec::elementwise(&[MonotoneFn::affine(1.0 / 64.0, -2.0)])];
    let mut bound: f64 = 2.0;
    for i in 0..n_layers {
        // cycle the first choice so small models still see several kinds
        let pick = if i == 0 { (seed % 5) as usize } else { rng.gen_range(0..5) };
        let pick = if channels < 2 && (pick == 2 || pick == 3) { 4 } else { pick };
        match pick {
            0 => {
                let w = random_conv(&mut rng, channels);
                let gain = w.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                bound *= gain;
                layers.push(LayerSpec::conv1x1(&w));
            }
            1 => {
                let l: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.6..1.6)).collect();
                bound *= l.iter().cloned().fold(0.0, f64::max);
                layers.push(LayerSpec::channel_scale(&l));
            }
            2 => {
                let split = rng.gen_range(1..channels);
                let c = conditioner(&mut rng, split, channels - split);
                bound = coupled_bound(&c, bound);
                layers.push(LayerSpec::coupling(split, &c));
            }
            3 => {
                let bounds: Vec<usize> = (0..=channels).collect();
                let conds: Vec<Option<Conditioner>> = (0..channels)
                    .map(|j| (j > 0).then(|| conditioner(&mut rng, j, 1)))
                    .collect();
                for c in conds.iter().flatten() {
                    bound = bound.max(coupled_bound(c, bound));
                }
                layers.push(LayerSpec::autoregressive(&bounds, &conds));
            }
            _ => {
                let d = bound + 0.5;
                match rng.gen_range(0..3) {
                    0 => {
                        layers.push(LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Sigmoid).with_domain(-d, d)]));
                        layers.push(LayerSpec::elementwise(&[MonotoneFn::affine(4.0, -2.0)]));
                        bound = 2.0;
                    }
                    1 => {
                        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
                        layers.push(LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Sigmoid).with_domain(-d, d)]));
                        layers.push(LayerSpec::elementwise(&[
                            MonotoneFn::new(FnKind::Logit).with_domain(s(-d - 0.5), s(d + 0.5))
                        ]));
                        bound = d + 0.5;
                    }
                    _ => {
                        let d = d.min(2.5);
                        if bound + 0.25 > d {
                            let l = vec![(d - 0.25) / bound; channels];
                            layers.push(LayerSpec::channel_scale(&l));
                        }
                        layers.push(LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Exp).with_domain(-d, d)]));
                        let e = d.exp();
                        layers.push(LayerSpec::elementwise(&[MonotoneFn::affine(4.0 / e, -2.0)]));
                        bound = 2.0;
                    }
                }
            }
        }
        if bound > RENORM_ABOVE {
            layers.push(LayerSpec::channel_scale(&vec![2.0 / bound; channels]));
            bound = 2.0;
        }
    }
    FlowModel::new(precision, &Prior::default(), layers)
}

/// Fixture for the `(k, h)` sweep: one affine layer of slope `2⁻¹¹` into a
/// uniform prior. A cell spans `2^(k-h)` grid steps in `x`, so its image
/// holds `2^(k-h-11)` steps and the layer fails exactly when `k - h ≤ 11`.
pub fn sweep_fixture(precision: Precision) -> Result<FlowModel> {
    let scale = 1.0 / 2048.0;
    FlowModel::new(
        precision,
        &Prior::Uniform { lo: 0.0, hi: 256.0 * scale },
        vec![LayerSpec::elementwise(&[MonotoneFn::affine(scale, 0.0)])],
    )
}

/// Fixture for measuring auxiliary bits. The first layer has slope one, so
/// it decodes `log₂ S` bits per dimension before anything is encoded, split
/// `b` ways; the layers after it only contract.
pub fn aux_fixture(precision: Precision, channels: usize) -> Result<FlowModel> {
    FlowModel::new(
        precision,
        &Prior::default(),
        vec![
            LayerSpec::elementwise(&[MonotoneFn::affine(1.0, -128.0)]),
            LayerSpec::channel_scale(&vec![1.0 / 64.0; channels]),
        ],
    )
}

/// A small fixed model for image data in `[lo, hi)`.
pub fn demo_model(channels: usize, range: (i64, i64), precision: Precision) -> Result<FlowModel> {
    let scale = 4.0 / (range.1 - range.0) as f64;
    let mut layers = vec![LayerSpec::elementwise(&[MonotoneFn::affine(scale, -2.0 - range.0 as f64 * scale)])];
    if channels > 1 {
        let w: Vec<Vec<f64>> = (0..channels)
            .map(|i| (0..channels).map(|j| if i == j { 1.0 } else { -0.3 / channels as f64 }).collect())
            .collect();
        layers.push(LayerSpec::conv1x1(&w));
        let split = channels / 2;
        let cond = Conditioner {
            scale_weight: vec![vec![0.2; split]; channels - split],
            scale_bias: vec![0.0; channels - split],
            shift_weight: vec![vec![-0.5 / split as f64; split]; channels - split],
            shift_bias: vec![0.0; channels - split],
            scale_bound: 0.5,
        };
        layers.push(LayerSpec::coupling(split, &cond));
    }
    // |value| ≤ 2.6·e^0.5 + 1.3 < 7 after the coupling
    layers.push(LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Sigmoid).with_domain(-7.0, 7.0)]));
    layers.push(LayerSpec::elementwise(&[MonotoneFn::affine(4.0, -2.0)]));
    FlowModel::new(precision, &Prior::default(), layers)
}

/// Uniform random bytes shaped `channels × positions`.
pub fn random_bytes<R: Rng>(rng: &mut R, channels: usize, positions: usize) -> Tensor {
    let data = (0..channels * positions).map(|_| rng.gen_range(0..256)).collect();
    Tensor::new(channels, positions, data).expect("shape matches")
}

/// Smooth synthetic image data: a ramp plus noise, clipped to bytes.
pub fn smooth_bytes<R: Rng>(rng: &mut R, channels: usize, positions: usize) -> Tensor {
    let base = rng.gen_range(40.0..200.0);
    let data = (0..channels * positions)
        .map(|i| {
            let p = (i % positions) as f64 / positions.max(1) as f64;
            (base + 30.0 * (6.0 * p).sin() + rng.gen_range(-8.0..8.0)).clamp(0.0, 255.0) as i64
        })
        .collect();
    Tensor::new(channels, positions, data).expect("shape matches")
}
