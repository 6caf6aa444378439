//! Flow models: a stack of layers over a factorized prior.

mod spec;

pub use spec::{
    format_hex_float, parse_hex_float, ConditionerSpec, FnName, FnSpec, LayerSpec, ModelSpec, PriorSpec, Real,
    MODEL_FORMAT,
};

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::elemflow::CellMap;
use crate::error::{Error, Result};
use crate::fixedq::{mantissa_to_f64, Precision};
use crate::layers::{Autoregressive, ChannelScale, Conv1x1, Elementwise, Layer, Prior, Tensor};
use crate::par::Exec;
use crate::ubcs::UniformCoder;

/// Where the bits of one coded sample went.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CodelengthReport {
    pub dims: usize,
    /// Bits added by the flow layers, the prior and the observation model.
    pub total_bits: f64,
    /// Bits taken back by decoding dequantization noise.
    pub refund_bits: f64,
    pub net_bits: f64,
    pub per_layer_bits: Vec<f64>,
    pub prior_bits: f64,
    /// Bits spent coding the data given its latent (zero for floor).
    pub observation_bits: f64,
    /// Peak draw on the auxiliary stream while coding.
    pub aux_bits_required: f64,
    pub bpd: f64,
}

impl CodelengthReport {
    pub(crate) fn finish(&mut self) {
        self.total_bits = self.per_layer_bits.iter().sum::<f64>() + self.prior_bits + self.observation_bits;
        self.net_bits = self.total_bits - self.refund_bits;
        self.bpd = if self.dims == 0 { 0.0 } else { self.net_bits / self.dims as f64 };
    }

    /// Sum of several reports; `aux_bits_required` keeps the largest value.
    pub fn sum<'a>(reports: impl IntoIterator<Item = &'a CodelengthReport>) -> CodelengthReport {
        let mut out = CodelengthReport::default();
        for r in reports {
            out.dims += r.dims;
            out.refund_bits += r.refund_bits;
            out.prior_bits += r.prior_bits;
            out.observation_bits += r.observation_bits;
            out.aux_bits_required = out.aux_bits_required.max(r.aux_bits_required);
            if out.per_layer_bits.len() < r.per_layer_bits.len() {
                out.per_layer_bits.resize(r.per_layer_bits.len(), 0.0);
            }
            for (a, b) in out.per_layer_bits.iter_mut().zip(&r.per_layer_bits) {
                *a += b;
            }
        }
        out.finish();
        out
    }
}

/// A validated model. Immutable once built.
#[derive(Clone, Debug)]
pub struct FlowModel {
    spec: ModelSpec,
    layers: Vec<Layer>,
    prior: Prior,
    channels: Option<usize>,
    hash: [u8; 32],
}

fn build_layer(spec: &LayerSpec, path: &str, prec: &Precision) -> Result<Layer> {
    let wrap = |e: Error| match e {
        e @ Error::Model { .. } => e,
        e => Error::model(path, e.to_string()),
    };
    let layer = match spec {
        LayerSpec::Elementwise { fns } => {
            let fns = fns
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let p = format!("{path}.fns[{i}]");
                    let f = f.to_fn(&p)?;
                    CellMap::new(&f, prec.k, prec.h).map_err(|e| Error::model(&p, e.to_string()))?;
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            Layer::Elementwise(Elementwise::new(fns).map_err(wrap)?)
        }
        LayerSpec::ChannelScale { lambdas } => {
            let ls: Vec<f64> = lambdas.iter().map(|r| r.0).collect();
            let s = ChannelScale::new(ls).map_err(wrap)?;
            s.scales(prec.s).map_err(wrap)?;
            Layer::ChannelScale(s)
        }
        LayerSpec::Conv1x1 { weight } => {
            let n = weight.len();
            if let Some(i) = weight.iter().position(|r| r.len() != n) {
                return Err(Error::model(
                    format!("{path}.weight[{i}]"),
                    format!("row has {} entries, matrix needs {n}", weight[i].len()),
                ));
            }
            let w: Vec<Vec<f64>> = weight.iter().map(|r| r.iter().map(|v| v.0).collect()).collect();
            if w.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::model(format!("{path}.weight"), "non-finite entry"));
            }
            let c = Conv1x1::new(w).map_err(|e| Error::model(format!("{path}.weight"), e.to_string()))?;
            c.codelength(prec.s).map_err(wrap)?;
            Layer::Conv1x1(c)
        }
        LayerSpec::Coupling { split, conditioner } => {
            let channels = split + conditioner.scale_bias.len();
            let a = Autoregressive::coupling(channels, *split, conditioner.to_conditioner())
                .map_err(|e| Error::model(format!("{path}.conditioner"), e.to_string()))?;
            Layer::Autoregressive(a)
        }
        LayerSpec::Autoregressive { bounds, conditioners } => {
            let conds = conditioners.iter().map(|c| c.as_ref().map(|c| c.to_conditioner())).collect();
            Layer::Autoregressive(Autoregressive::new(bounds.clone(), conds).map_err(wrap)?)
        }
    };
    Ok(layer)
}

impl FlowModel {
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        if spec.format != MODEL_FORMAT {
            return Err(Error::model(
                "format",
                format!("expected `{MODEL_FORMAT}`, found `{}`", spec.format),
            ));
        }
        let prec = spec.precision;
        prec.validate().map_err(|e| Error::model("precision", e.to_string()))?;
        let prior = spec.prior.to_prior();
        prior.validate().map_err(|e| Error::model("prior", e.to_string()))?;
        if let Some(f) = prior.cdf_fn() {
            CellMap::new(&f, prec.k, prec.h).map_err(|e| Error::model("prior", e.to_string()))?;
        }
        let mut channels = spec.channels;
        if channels == Some(0) {
            return Err(Error::model("channels", "must be positive"));
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let path = format!("layers[{i}]");
            let layer = build_layer(ls, &path, &prec)?;
            match (channels, layer.channels()) {
                (Some(c), Some(d)) if c != d => {
                    return Err(Error::model(
                        path,
                        format!("{} layer acts on {d} channels, data has {c}", layer.kind_name()),
                    ))
                }
                (None, Some(d)) => channels = Some(d),
                _ => {}
            }
            layers.push(layer);
        }
        let hash = Sha256::digest(spec.canonical().as_bytes()).into();
        Ok(FlowModel {
            spec,
            layers,
            prior,
            channels,
            hash,
        })
    }

    pub fn new(precision: Precision, prior: &Prior, layers: Vec<LayerSpec>) -> Result<Self> {
        FlowModel::from_spec(ModelSpec::new(precision, prior, layers))
    }

    pub fn parse(text: &str) -> Result<Self> {
        FlowModel::from_spec(ModelSpec::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FlowModel::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.canonical())?;
        Ok(())
    }

    pub fn canonical(&self) -> String {
        self.spec.canonical()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// SHA-256 of the canonical text.
    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn hash_hex(&self) -> String {
        hex_string(&self.hash)
    }

    pub fn precision(&self) -> &Precision {
        &self.spec.precision
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Channel count fixed by the model, if any.
    pub fn channels(&self) -> Option<usize> {
        self.channels
    }

    /// The same model at different precision settings. The result hashes
    /// differently.
    pub fn with_precision(&self, precision: Precision) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.precision = precision;
        FlowModel::from_spec(spec)
    }

    pub fn check_shape(&self, channels: usize) -> Result<()> {
        match self.channels {
            Some(c) if c != channels => Err(Error::Parameter(format!(
                "model expects {c} channels, data has {channels}"
            ))),
            _ => Ok(()),
        }
    }

    /// Run every layer forward in place, returning the bits each one added
    /// to the stream.
    pub fn forward<C: UniformCoder>(&self, t: &mut Tensor, aux: &mut C, exec: Exec) -> Result<Vec<f64>> {
        self.check_shape(t.channels())?;
        let prec = self.precision();
        let mut bits = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let before = aux.information_bits();
            l.forward(t, prec, aux, exec).map_err(|e| e.in_layer(i))?;
            bits.push(aux.information_bits() - before);
        }
        Ok(bits)
    }

    pub fn inverse<C: UniformCoder>(&self, t: &mut Tensor, aux: &mut C, exec: Exec) -> Result<()> {
        self.check_shape(t.channels())?;
        let prec = self.precision();
        for (i, l) in self.layers.iter().enumerate().rev() {
            l.inverse(t, prec, aux, exec).map_err(|e| e.in_layer(i))?;
        }
        Ok(())
    }

    /// Transform `x` and code the latent under the prior.
    pub fn encode<C: UniformCoder>(&self, x: Tensor, aux: &mut C, exec: Exec) -> Result<CodelengthReport> {
        let mut t = x;
        let per_layer_bits = self.forward(&mut t, aux, exec)?;
        let before = aux.information_bits();
        self.prior.encode(t.data(), self.precision(), aux, exec)?;
        let mut r = CodelengthReport {
            dims: t.len(),
            per_layer_bits,
            prior_bits: aux.information_bits() - before,
            ..Default::default()
        };
        r.finish();
        Ok(r)
    }

    /// Inverse of [`FlowModel::encode`].
    pub fn decode<C: UniformCoder>(&self, channels: usize, positions: usize, aux: &mut C, exec: Exec) -> Result<Tensor> {
        self.check_shape(channels)?;
        let z = self.prior.decode(channels * positions, self.precision(), aux, exec)?;
        let mut t = Tensor::new(channels, positions, z)?;
        self.inverse(&mut t, aux, exec)?;
        Ok(t)
    }

    /// `ln p_X(x)` of the continuous model; `x` is channel-major.
    pub fn log_density(&self, x: &[f64], positions: usize) -> f64 {
        let mut v = x.to_vec();
        let mut ld = 0.0;
        for l in &self.layers {
            ld += l.forward_continuous(&mut v, positions);
        }
        ld + v.iter().map(|&z| self.prior.log_density(z)).sum::<f64>()
    }

    /// Negative log-likelihood in bits per dimension of the continuous model
    /// at the quantized point `x`. Coding `x` costs about this plus `k` bits
    /// per dimension.
    pub fn nll_reference(&self, x: &Tensor) -> f64 {
        let k = self.precision().k;
        let v: Vec<f64> = x.data().iter().map(|&m| mantissa_to_f64(m, k)).collect();
        -self.log_density(&v, x.positions()) / std::f64::consts::LN_2 / x.len() as f64
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn model_forward<C: UniformCoder>(x: &mut Tensor, model: &FlowModel, aux: &mut C, exec: Exec) -> Result<Vec<f64>> {
    model.forward(x, aux, exec)
}

pub fn model_inverse<C: UniformCoder>(z: &mut Tensor, model: &FlowModel, aux: &mut C, exec: Exec) -> Result<()> {
    model.inverse(z, aux, exec)
}

pub fn nll_reference(x: &Tensor, model: &FlowModel) -> f64 {
    model.nll_reference(x)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FlowModel> {
    FlowModel::load(path)
}

pub fn save_model(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elemflow::{FnKind, MonotoneFn};
    use crate::fixedq::quantize_mantissa;
    use crate::layers::Conditioner;
    use crate::ubcs::{BitStream, CoderParams, CoderState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filled(n: usize, seed: u64) -> CoderState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..n).map(|_| rng.gen()).collect();
        CoderState::from_parts(CoderParams::default(), 1 << 20, BitStream::from_words(words)).unwrap()
    }

    fn three_layer() -> FlowModel {
        let cond = Conditioner {
            scale_weight: vec![vec![0.3], vec![-0.2]],
            scale_bias: vec![0.1, 0.0],
            shift_weight: vec![vec![0.5], vec![1.0]],
            shift_bias: vec![0.0, -0.25],
            scale_bound: 1.0,
        };
        let w = vec![
            vec![0.8, 0.3, -0.1],
            vec![-0.2, 1.1, 0.4],
            vec![0.1, -0.3, 0.9],
        ];
        let layers = vec![
            LayerSpec::coupling(1, &cond),
            LayerSpec::conv1x1(&w),
            LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Sigmoid).with_domain(-12.0, 12.0)]),
        ];
        FlowModel::new(Precision::default(), &Prior::default(), layers).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, c: usize, p: usize, k: u32) -> Tensor {
        let data = (0..c * p).map(|_| quantize_mantissa(rng.gen_range(-2.0..2.0), k).unwrap()).collect();
        Tensor::new(c, p, data).unwrap()
    }

    #[test]
    fn empty_model_is_identity() {
        let m = FlowModel::new(Precision::default(), &Prior::default(), vec![]).unwrap();
        let x = Tensor::new(1, 3, vec![5, -7, 1 << 30]).unwrap();
        let mut t = x.clone();
        let mut aux = filled(4, 1);
        assert!(m.forward(&mut t, &mut aux, Exec::Sequential).unwrap().is_empty());
        assert_eq!(t, x);
        assert_eq!(m.channels(), None);
    }

    #[test]
    fn identity_logistic_costs_two_bits_at_zero() {
        let m = FlowModel::new(Precision::default(), &Prior::default(), vec![]).unwrap();
        let x = Tensor::zeros(2, 5);
        assert!((m.nll_reference(&x) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_saves_one_bit() {
        let p = Precision::default();
        let id = FlowModel::new(p, &Prior::default(), vec![]).unwrap();
        let dbl = FlowModel::new(p, &Prior::default(), vec![LayerSpec::channel_scale(&[2.0])]).unwrap();
        let x = Tensor::new(1, 1, vec![0]).unwrap();
        assert!((id.nll_reference(&x) - dbl.nll_reference(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_layer_round_trip() {
        let m = three_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut aux = filled(1 << 14, 3);
        let before = aux.clone();
        for _ in 0..1000 {
            let x = random_input(&mut rng, 3, 1, 28);
            let mut t = x.clone();
            m.forward(&mut t, &mut aux, Exec::Sequential).unwrap();
            m.inverse(&mut t, &mut aux, Exec::Sequential).unwrap();
            assert_eq!(t, x);
        }
        assert_eq!(aux, before);
    }

    #[test]
    fn stack_error_within_layer_bounds() {
        let m = three_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_input(&mut rng, 3, 200, 28);
        let mut t = x.clone();
        let mut aux = filled(1 << 14, 6);
        m.forward(&mut t, &mut aux, Exec::Parallel).unwrap();
        let mut xf: Vec<f64> = x.data().iter().map(|&v| mantissa_to_f64(v, 28)).collect();
        for l in m.layers() {
            l.forward_continuous(&mut xf, 200);
        }
        let err = t
            .data()
            .iter()
            .zip(&xf)
            .map(|(&a, b)| (mantissa_to_f64(a, 28) - b).abs())
            .fold(0.0, f64::max);
        // three layers, each within a few multiples of 1/S + 2^-k + 2^-2h
        let per_layer = 1.0 / 65536.0 + 2f64.powi(-28) + 2f64.powi(-24);
        assert!(err < 3.0 * 10.0 * per_layer, "{err}");
    }

    #[test]
    fn codelength_tracks_nll() {
        let m = three_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_input(&mut rng, 3, 300, 28);
        let mut aux = filled(1 << 14, 8);
        let r = m.encode(x.clone(), &mut aux, Exec::Parallel).unwrap();
        assert!((r.total_bits - r.per_layer_bits.iter().sum::<f64>() - r.prior_bits).abs() < 1e-9);
        let gap = r.bpd - 28.0 - m.nll_reference(&x);
        assert!(gap.abs() < 0.01, "{gap}");
        let back = m.decode(3, 300, &mut aux, Exec::Parallel).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn nll_matches_finite_differences() {
        let m = three_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let step = 1e-5;
        let mut jac = nalgebra::DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += step;
            lo[j] -= step;
            for l in m.layers() {
                l.forward_continuous(&mut hi, 1);
                l.forward_continuous(&mut lo, 1);
            }
            for i in 0..3 {
                jac[(i, j)] = (hi[i] - lo[i]) / (2.0 * step);
            }
        }
        let mut z = x.clone();
        for l in m.layers() {
            l.forward_continuous(&mut z, 1);
        }
        let fd: f64 = z.iter().map(|&v| m.prior().log_density(v)).sum::<f64>() + jac.determinant().abs().ln();
        let fd_bits = -fd / std::f64::consts::LN_2 / 3.0;
        let an_bits = -m.log_density(&x, 1) / std::f64::consts::LN_2 / 3.0;
        assert!((fd_bits - an_bits).abs() < 1e-4, "{fd_bits} vs {an_bits}");
    }

    #[test]
    fn save_load_is_canonical() {
        let m = three_layer();
        let text = m.canonical();
        let again = FlowModel::parse(&text).unwrap();
        assert_eq!(again.canonical(), text);
        assert_eq!(again.content_hash(), m.content_hash());
        assert_eq!(
            m.with_precision(Precision::new(24, 10, 1 << 16, 2).unwrap()).unwrap().hash_hex().len(),
            64
        );
        assert_ne!(
            m.with_precision(Precision::new(24, 10, 1 << 16, 2).unwrap()).unwrap().content_hash(),
            m.content_hash()
        );
    }

    #[test]
    fn minimal_spec_hash_is_stable() {
        let text = r#"{"format": "iflow.model/1",
            "precision": {"k": 28, "h": 12, "s": 65536, "b": 4},
            "prior": {"kind": "logistic", "loc": 0, "scale": 1}}"#;
        let a = FlowModel::parse(text).unwrap();
        let b = FlowModel::parse(&a.canonical()).unwrap();
        assert_eq!(a.hash_hex(), b.hash_hex());
        assert!(a.canonical().contains("\"clamp\": \"0x1.8p+3\""));
    }

    #[test]
    fn model_errors_carry_locations() {
        let p = Precision::default();
        let e = FlowModel::new(
            p,
            &Prior::default(),
            vec![LayerSpec::channel_scale(&[1.0, 2.0]), LayerSpec::conv1x1(&[vec![1.0, 2.0], vec![2.0, 4.0]])],
        )
        .unwrap_err();
        assert!(matches!(&e, Error::Model { path, .. } if path == "layers[1].weight"), "{e}");
        let e = FlowModel::new(
            p,
            &Prior::default(),
            vec![LayerSpec::channel_scale(&[1.0, 2.0]), LayerSpec::channel_scale(&[1.0])],
        )
        .unwrap_err();
        assert!(matches!(&e, Error::Model { path, .. } if path == "layers[1]"), "{e}");
        let e = FlowModel::new(p, &Prior::default(), vec![LayerSpec::conv1x1(&[vec![1.0], vec![2.0]])]).unwrap_err();
        assert!(matches!(&e, Error::Model { path, .. } if path == "layers[0].weight[0]"), "{e}");
    }

    #[test]
    fn layer_errors_carry_index() {
        let p = Precision::default();
        let layers = vec![
            LayerSpec::channel_scale(&[1.0]),
            LayerSpec::elementwise(&[MonotoneFn::new(FnKind::Sigmoid).with_domain(-1.0, 1.0)]),
        ];
        let m = FlowModel::new(p, &Prior::default(), layers).unwrap();
        let mut t = Tensor::new(1, 1, vec![5 << 28]).unwrap();
        let e = m.forward(&mut t, &mut filled(8, 1), Exec::Sequential).unwrap_err();
        assert!(matches!(e, Error::Layer { index: 1, .. }), "{e}");
    }
}
