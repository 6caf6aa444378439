//! Serialized model description.
//!
//! Reals are written as hexadecimal floating point strings (`"0x1.8p+1"`) so
//! that loading is bit-exact on every platform. Plain JSON numbers are
//! accepted on input and rounded to the nearest double.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::elemflow::{FnKind, MonotoneFn, Strategy};
use crate::error::{Error, Result};
use crate::fixedq::Precision;
use crate::layers::{Conditioner, Prior};

pub const MODEL_FORMAT: &str = "iflow.model/1";

/// A real number that serializes as an exact hex float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Real(pub f64);

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real(v)
    }
}

/// Exact hexadecimal rendering of a double, e.g. `0x1.8p+1` for 3.
pub fn format_hex_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let sign = if v.is_sign_negative() { "-" } else { "" };
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    let dot = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    format!("{sign}0x{lead}{dot}p{e:+}")
}

pub fn parse_hex_float(s: &str) -> std::result::Result<f64, String> {
    hexf_parse::parse_hexf64(s, false).map_err(|e| format!("`{s}` is not an exact hex float ({e})"))
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&format_hex_float(self.0))
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Real;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a hex float string")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Real, E> {
                Ok(Real(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Real, E> {
                let r = v as f64;
                if r as i64 != v {
                    return Err(E::custom(format!("integer {v} is not exactly representable")));
                }
                Ok(Real(r))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Real, E> {
                let r = v as f64;
                if r as u64 != v {
                    return Err(E::custom(format!("integer {v} is not exactly representable")));
                }
                Ok(Real(r))
            }

            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Real, E> {
                parse_hex_float(s).map(Real).map_err(E::custom)
            }
        }
        de.deserialize_any(V)
    }
}

fn reals(v: &[Real]) -> Vec<f64> {
    v.iter().map(|r| r.0).collect()
}

fn real_rows(v: &[Vec<Real>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| reals(r)).collect()
}

fn to_reals(v: &[f64]) -> Vec<Real> {
    v.iter().map(|&x| Real(x)).collect()
}

fn to_real_rows(v: &[Vec<f64>]) -> Vec<Vec<Real>> {
    v.iter().map(|r| to_reals(r)).collect()
}

fn default_clamp() -> Real {
    Real(12.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Logistic {
        loc: Real,
        scale: Real,
        #[serde(default = "default_clamp")]
        clamp: Real,
    },
    Uniform {
        lo: Real,
        hi: Real,
    },
}

impl PriorSpec {
    pub fn to_prior(&self) -> Prior {
        match *self {
            PriorSpec::Logistic { loc, scale, clamp } => Prior::Logistic {
                loc: loc.0,
                scale: scale.0,
                clamp: clamp.0,
            },
            PriorSpec::Uniform { lo, hi } => Prior::Uniform { lo: lo.0, hi: hi.0 },
        }
    }

    pub fn from_prior(p: &Prior) -> Self {
        match *p {
            Prior::Logistic { loc, scale, clamp } => PriorSpec::Logistic {
                loc: Real(loc),
                scale: Real(scale),
                clamp: Real(clamp),
            },
            Prior::Uniform { lo, hi } => PriorSpec::Uniform {
                lo: Real(lo),
                hi: Real(hi),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FnName {
    Affine,
    Sigmoid,
    Logit,
    Exp,
    LogisticCdf,
}

/// One scalar function. `scale`/`shift` belong to `affine`, `loc`/`scale` to
/// `logistic_cdf`; `domain` defaults to the function's natural domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnSpec {
    #[serde(rename = "fn")]
    pub name: FnName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[Real; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
}

impl FnSpec {
    pub fn from_fn(f: &MonotoneFn) -> Self {
        let (name, scale, shift, loc) = match f.kind {
            FnKind::Affine { scale, shift } => (FnName::Affine, Some(scale), Some(shift), None),
            FnKind::Sigmoid => (FnName::Sigmoid, None, None, None),
            FnKind::Logit => (FnName::Logit, None, None, None),
            FnKind::Exp => (FnName::Exp, None, None, None),
            FnKind::LogisticCdf { loc, scale } => (FnName::LogisticCdf, Some(scale), None, Some(loc)),
        };
        let domain = (f.domain != f.kind.default_domain()).then(|| [Real(f.domain.0), Real(f.domain.1)]);
        let strategy = (f.strategy != Strategy::default()).then_some(f.strategy);
        FnSpec {
            name,
            scale: scale.map(Real),
            shift: shift.map(Real),
            loc: loc.map(Real),
            domain,
            strategy,
        }
    }

    pub fn to_fn(&self, path: &str) -> Result<MonotoneFn> {
        let need = |v: Option<Real>, field: &str| {
            v.map(|r| r.0)
                .ok_or_else(|| Error::model(format!("{path}.{field}"), "missing field"))
        };
        let forbid = |v: Option<Real>, field: &str| match v {
            Some(_) => Err(Error::model(
                format!("{path}.{field}"),
                format!("not a parameter of {:?}", self.name),
            )),
            None => Ok(()),
        };
        let kind = match self.name {
            FnName::Affine => {
                forbid(self.loc, "loc")?;
                FnKind::Affine {
                    scale: need(self.scale, "scale")?,
                    shift: self.shift.map_or(0.0, |r| r.0),
                }
            }
            FnName::LogisticCdf => {
                forbid(self.shift, "shift")?;
                FnKind::LogisticCdf {
                    loc: need(self.loc, "loc")?,
                    scale: need(self.scale, "scale")?,
                }
            }
            other => {
                forbid(self.scale, "scale")?;
                forbid(self.shift, "shift")?;
                forbid(self.loc, "loc")?;
                match other {
                    FnName::Sigmoid => FnKind::Sigmoid,
                    FnName::Logit => FnKind::Logit,
                    _ => FnKind::Exp,
                }
            }
        };
        let mut f = MonotoneFn::new(kind);
        if let Some([lo, hi]) = self.domain {
            f = f.with_domain(lo.0, hi.0);
        }
        if let Some(s) = self.strategy {
            f = f.with_strategy(s);
        }
        f.validate().map_err(|e| Error::model(path, e.to_string()))?;
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionerSpec {
    pub scale_weight: Vec<Vec<Real>>,
    pub scale_bias: Vec<Real>,
    pub shift_weight: Vec<Vec<Real>>,
    pub shift_bias: Vec<Real>,
    pub scale_bound: Real,
}

impl ConditionerSpec {
    pub fn to_conditioner(&self) -> Conditioner {
        Conditioner {
            scale_weight: real_rows(&self.scale_weight),
            scale_bias: reals(&self.scale_bias),
            shift_weight: real_rows(&self.shift_weight),
            shift_bias: reals(&self.shift_bias),
            scale_bound: self.scale_bound.0,
        }
    }

    pub fn from_conditioner(c: &Conditioner) -> Self {
        ConditionerSpec {
            scale_weight: to_real_rows(&c.scale_weight),
            scale_bias: to_reals(&c.scale_bias),
            shift_weight: to_real_rows(&c.shift_weight),
            shift_bias: to_reals(&c.shift_bias),
            scale_bound: Real(c.scale_bound),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// One function for every channel, or one per channel.
    Elementwise { fns: Vec<FnSpec> },
    ChannelScale { lambdas: Vec<Real> },
    Conv1x1 { weight: Vec<Vec<Real>> },
    /// The first `split` channels condition an affine map of the rest.
    Coupling { split: usize, conditioner: ConditionerSpec },
    Autoregressive {
        bounds: Vec<usize>,
        conditioners: Vec<Option<ConditionerSpec>>,
    },
}

impl LayerSpec {
    pub fn elementwise(fns: &[MonotoneFn]) -> Self {
        LayerSpec::Elementwise {
            fns: fns.iter().map(FnSpec::from_fn).collect(),
        }
    }

    pub fn channel_scale(lambdas: &[f64]) -> Self {
        LayerSpec::ChannelScale {
            lambdas: to_reals(lambdas),
        }
    }

    pub fn conv1x1(weight: &[Vec<f64>]) -> Self {
        LayerSpec::Conv1x1 {
            weight: to_real_rows(weight),
        }
    }

    pub fn coupling(split: usize, cond: &Conditioner) -> Self {
        LayerSpec::Coupling {
            split,
            conditioner: ConditionerSpec::from_conditioner(cond),
        }
    }

    pub fn autoregressive(bounds: &[usize], conds: &[Option<Conditioner>]) -> Self {
        LayerSpec::Autoregressive {
            bounds: bounds.to_vec(),
            conditioners: conds
                .iter()
                .map(|c| c.as_ref().map(ConditionerSpec::from_conditioner))
                .collect(),
        }
    }
}

/// Top-level document.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSpec {
    pub format: String,
    /// Channel count of the data; inferred from the layers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    pub precision: Precision,
    pub prior: PriorSpec,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(precision: Precision, prior: &Prior, layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            format: MODEL_FORMAT.into(),
            channels: None,
            precision,
            prior: PriorSpec::from_prior(prior),
            layers,
        }
    }

    /// Parse JSON text, reporting the path of the first offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema {
            path: ".".into(),
            message: e.to_string(),
        })?;
        let raw: RawSpec = at_path(doc, "")?;
        let layers = raw
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_layer(v, &format!("layers[{i}]")))
            .collect::<Result<_>>()?;
        Ok(ModelSpec {
            format: raw.format,
            channels: raw.channels,
            precision: raw.precision,
            prior: raw.prior,
            layers,
        })
    }

    /// Canonical text: pretty JSON with hex reals and a trailing newline.
    pub fn canonical(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model spec serializes");
        s.push('\n');
        s
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    format: String,
    #[serde(default)]
    channels: Option<usize>,
    precision: Precision,
    prior: PriorSpec,
    #[serde(default)]
    layers: Vec<serde_json::Value>,
}

fn at_path<T: serde::de::DeserializeOwned>(v: serde_json::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (_, ".") if !prefix.is_empty() => prefix.to_string(),
            (true, _) => inner,
            (false, i) if i.starts_with('[') => format!("{prefix}{i}"),
            (false, i) => format!("{prefix}.{i}"),
        };
        Error::Schema {
            path,
            message: e.inner().to_string(),
        }
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementwiseBody {
    fns: Vec<FnSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelScaleBody {
    lambdas: Vec<Real>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Conv1x1Body {
    weight: Vec<Vec<Real>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingBody {
    split: usize,
    conditioner: ConditionerSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AutoregressiveBody {
    bounds: Vec<usize>,
    conditioners: Vec<Option<ConditionerSpec>>,
}

/// Layers are read kind-first so that errors inside a layer keep their full
/// path.
fn parse_layer(v: serde_json::Value, path: &str) -> Result<LayerSpec> {
    let schema = |p: String, m: &str| Error::Schema {
        path: p,
        message: m.to_string(),
    };
    let serde_json::Value::Object(mut obj) = v else {
        return Err(schema(path.to_string(), "layer must be an object"));
    };
    let kind = match obj.remove("kind") {
        Some(serde_json::Value::String(k)) => k,
        Some(_) => return Err(schema(format!("{path}.kind"), "must be a string")),
        None => return Err(schema(path.to_string(), "missing field `kind`")),
    };
    let body = serde_json::Value::Object(obj);
    Ok(match kind.as_str() {
        "elementwise" => LayerSpec::Elementwise {
            fns: at_path::<ElementwiseBody>(body, path)?.fns,
        },
        "channel_scale" => LayerSpec::ChannelScale {
            lambdas: at_path::<ChannelScaleBody>(body, path)?.lambdas,
        },
        "conv1x1" => LayerSpec::Conv1x1 {
            weight: at_path::<Conv1x1Body>(body, path)?.weight,
        },
        "coupling" => {
            let b: CouplingBody = at_path(body, path)?;
            LayerSpec::Coupling {
                split: b.split,
                conditioner: b.conditioner,
            }
        }
        "autoregressive" => {
            let b: AutoregressiveBody = at_path(body, path)?;
            LayerSpec::Autoregressive {
                bounds: b.bounds,
                conditioners: b.conditioners,
            }
        }
        other => {
            return Err(schema(
                format!("{path}.kind"),
                &format!("unknown layer kind `{other}`"),
            ))
        }
    })
}
