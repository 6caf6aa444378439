//! Invertible element-wise flows by piecewise linear interpolation.
//!
//! A monotone function is replaced, cell by cell on a `2^-h` grid, by the
//! chord through the quantized cell endpoints. The grid is uniform either in
//! `x` or in `z`; the other coordinate of each endpoint is obtained by
//! evaluating the function (or its inverse) and quantizing. Within a cell the
//! chord slope is rationalized so that an MST maps the cell into its image
//! without overflow.

use crate::error::{Error, Result};
use crate::fixedq::{mantissa_to_f64, pow2, quantize_clamped, Precision, MANTISSA_LIMIT};
use crate::mst::{mst_forward_batch, mst_inverse_batch, RationalScale};
use crate::par::Exec;
use crate::ubcs::UniformCoder;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FnKind {
    /// `a·x + b`
    Affine { scale: f64, shift: f64 },
    Sigmoid,
    /// inverse of the sigmoid
    Logit,
    Exp,
    /// CDF of a logistic distribution
    LogisticCdf { loc: f64, scale: f64 },
}

/// Which coordinate carries the uniform grid and how the cell of a point in
/// the other coordinate is located.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform in `x`; cells of a `z` are found by rounding `f⁻¹(z)` to the grid.
    #[default]
    UniformX,
    /// Uniform in `z`; cells of an `x` are found by rounding `f(x)` to the grid.
    UniformZ,
    /// Uniform in `x`; cells of a `z` are found by bisection.
    BinarySearchX,
    /// Uniform in `z`; cells of an `x` are found by bisection.
    BinarySearchZ,
}

impl Strategy {
    pub fn grid_in_x(self) -> bool {
        matches!(self, Strategy::UniformX | Strategy::BinarySearchX)
    }

    pub fn uses_rounding(self) -> bool {
        matches!(self, Strategy::UniformX | Strategy::UniformZ)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::UniformX => "uniform_x",
            Strategy::UniformZ => "uniform_z",
            Strategy::BinarySearchX => "binary_search_x",
            Strategy::BinarySearchZ => "binary_search_z",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Some(match s {
            "uniform_x" => Strategy::UniformX,
            "uniform_z" => Strategy::UniformZ,
            "binary_search_x" => Strategy::BinarySearchX,
            "binary_search_z" => Strategy::BinarySearchZ,
            _ => return None,
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(z: f64) -> f64 {
    if z <= 0.0 {
        f64::NEG_INFINITY
    } else if z >= 1.0 {
        f64::INFINITY
    } else {
        (z / (1.0 - z)).ln()
    }
}

/// Largest `|σ''|`, attained at `x = ±ln(2+√3)`.
pub const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63;

impl FnKind {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            FnKind::Affine { scale, shift } => scale * x + shift,
            FnKind::Sigmoid => sigmoid(x),
            FnKind::Logit => logit(x),
            FnKind::Exp => x.exp(),
            FnKind::LogisticCdf { loc, scale } => sigmoid((x - loc) / scale),
        }
    }

    pub fn eval_inverse(&self, z: f64) -> f64 {
        match *self {
            FnKind::Affine { scale, shift } => (z - shift) / scale,
            FnKind::Sigmoid => logit(z),
            FnKind::Logit => sigmoid(z),
            FnKind::Exp => {
                if z <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    z.ln()
                }
            }
            FnKind::LogisticCdf { loc, scale } => loc + scale * logit(z),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            FnKind::Affine { scale, .. } => scale,
            FnKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            FnKind::Logit => 1.0 / (x * (1.0 - x)),
            FnKind::Exp => x.exp(),
            FnKind::LogisticCdf { loc, scale } => {
                let s = sigmoid((x - loc) / scale);
                s * (1.0 - s) / scale
            }
        }
    }

    /// `ln |f'(x)|`, stable in the tails.
    pub fn log_abs_derivative(&self, x: f64) -> f64 {
        match *self {
            FnKind::Affine { scale, .. } => scale.abs().ln(),
            FnKind::Sigmoid => -softplus(-x) - softplus(x),
            FnKind::Logit => -(x.ln() + (1.0 - x).ln()),
            FnKind::Exp => x,
            FnKind::LogisticCdf { loc, scale } => {
                let t = (x - loc) / scale;
                -softplus(-t) - softplus(t) - scale.ln()
            }
        }
    }

    pub fn is_increasing(&self) -> bool {
        match *self {
            FnKind::Affine { scale, .. } => scale > 0.0,
            _ => true,
        }
    }

    /// Domain used when none is declared.
    pub fn default_domain(&self) -> (f64, f64) {
        match *self {
            FnKind::Affine { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            FnKind::Sigmoid => (-16.0, 16.0),
            FnKind::Logit => (1.0 / 1024.0, 1.0 - 1.0 / 1024.0),
            FnKind::Exp => (-16.0, 8.0),
            FnKind::LogisticCdf { loc, scale } => (loc - 12.0 * scale, loc + 12.0 * scale),
        }
    }

    /// Upper bound of `|f''|` on `[lo, hi]`.
    pub fn curvature_bound(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            FnKind::Affine { .. } => 0.0,
            FnKind::Sigmoid => SIGMOID_CURVATURE,
            FnKind::LogisticCdf { scale, .. } => SIGMOID_CURVATURE / (scale * scale),
            FnKind::Exp => hi.exp(),
            FnKind::Logit => {
                let f2 = |x: f64| ((2.0 * x - 1.0) / (x * x * (1.0 - x) * (1.0 - x))).abs();
                f2(lo).max(f2(hi))
            }
        }
    }

    /// Smallest and largest `|f'|` on `[lo, hi]`.
    pub fn derivative_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let peak = match *self {
            FnKind::Sigmoid => Some(0.0),
            FnKind::Logit => Some(0.5),
            FnKind::LogisticCdf { loc, .. } => Some(loc),
            _ => None,
        };
        let mut pts = vec![lo, hi];
        if let Some(p) = peak.filter(|p| *p > lo && *p < hi) {
            pts.push(p);
        }
        let vals: Vec<f64> = pts.iter().map(|&x| self.derivative(x).abs()).collect();
        (
            vals.iter().cloned().fold(f64::INFINITY, f64::min),
            vals.iter().cloned().fold(0.0, f64::max),
        )
    }

    fn negated(&self) -> FnKind {
        match *self {
            FnKind::Affine { scale, shift } => FnKind::Affine {
                scale: -scale,
                shift: -shift,
            },
            other => other,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A strictly monotone scalar function on a half-open domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotoneFn {
    pub kind: FnKind,
    pub domain: (f64, f64),
    pub strategy: Strategy,
}

impl MonotoneFn {
    pub fn new(kind: FnKind) -> Self {
        MonotoneFn {
            kind,
            domain: kind.default_domain(),
            strategy: Strategy::UniformX,
        }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn affine(scale: f64, shift: f64) -> Self {
        MonotoneFn::new(FnKind::Affine { scale, shift })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(x)
    }

    pub fn eval_inverse(&self, z: f64) -> f64 {
        self.kind.eval_inverse(z)
    }

    pub fn is_increasing(&self) -> bool {
        self.kind.is_increasing()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Parameter(format!("empty domain [{lo}, {hi})")));
        }
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        match self.kind {
            FnKind::Affine { scale, shift } => {
                if !(scale.is_finite() && shift.is_finite()) || scale == 0.0 {
                    return bad("affine scale must be finite and non-zero");
                }
            }
            FnKind::LogisticCdf { loc, scale } => {
                if !(loc.is_finite() && scale.is_finite() && scale > 0.0) {
                    return bad("logistic scale must be positive");
                }
                if !(lo.is_finite() && hi.is_finite()) {
                    return bad("logistic CDF needs a bounded domain");
                }
            }
            FnKind::Logit => {
                if lo <= 0.0 || hi > 1.0 {
                    return bad("logit domain must lie inside (0, 1)");
                }
            }
            FnKind::Sigmoid | FnKind::Exp => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return bad("domain must be bounded");
                }
            }
        }
        Ok(())
    }

    /// Lipschitz constant of the inverse over the image of the domain.
    pub fn lipschitz_mu(&self) -> f64 {
        1.0 / self.kind.derivative_range(self.domain.0, self.domain.1).0
    }

    /// Bound on `|f⁻¹(f(x)) − x|` for the floating point evaluation.
    pub fn roundtrip_eps(&self) -> f64 {
        let m = self.domain.0.abs().max(self.domain.1.abs()).min(1e6);
        1e-12 * (1.0 + m) * (1.0 + self.lipschitz_mu().min(1e6))
    }

    /// Whether the rounding lookup is guaranteed to land in the right cell.
    /// When it is not, lookups still succeed through the bisection fallback.
    pub fn rounding_is_exact(&self, k: u32, h: u32) -> bool {
        let (dmin, dmax) = self.kind.derivative_range(self.domain.0, self.domain.1);
        let mu = if self.strategy.grid_in_x() {
            1.0 / dmin
        } else {
            dmax
        };
        self.roundtrip_eps() + mu / pow2(k) < 1.0 / pow2(h + 1)
    }
}

/// A grid cell with endpoints as mantissas at precision `k`.
///
/// For decreasing functions the cell describes the increasing function
/// `−f`; callers negate outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterpInterval {
    pub index: i64,
    pub x_lo: i64,
    pub x_hi: i64,
    pub z_lo: i64,
    pub z_hi: i64,
    pub k: u32,
    pub strategy: Strategy,
}

impl InterpInterval {
    pub fn dx(&self) -> i64 {
        self.x_hi - self.x_lo
    }

    pub fn dz(&self) -> i64 {
        self.z_hi - self.z_lo
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (mantissa_to_f64(self.x_lo, self.k), mantissa_to_f64(self.x_hi, self.k))
    }

    pub fn z_bounds(&self) -> (f64, f64) {
        (mantissa_to_f64(self.z_lo, self.k), mantissa_to_f64(self.z_hi, self.k))
    }
}

/// Largest `R` with `R·Δx̂ ≤ (Δẑ − 1)·S + 1`, which keeps the image of the
/// cell inside `[ẑ_l, ẑ_h)`.
pub fn interp_slope(cell: &InterpInterval, s: u64) -> Result<RationalScale> {
    let (dx, dz) = (cell.dx() as i128, cell.dz() as i128);
    if dx < 1 {
        return Err(Error::Domain(format!("empty cell {}", cell.index)));
    }
    let r = ((dz - 1) * s as i128 + 1).div_euclid(dx);
    if r <= 0 {
        return Err(Error::CompressionFailure(format!(
            "cell {} is too flat: Δx̂={dx}, Δẑ={dz} gives R=0 at S={s}",
            cell.index
        )));
    }
    RationalScale::new(r.min(u64::MAX as i128) as u64, s)
}

/// Cell geometry of one function at one precision.
#[derive(Clone, Debug)]
pub struct CellMap {
    g: FnKind,
    negate: bool,
    strategy: Strategy,
    k: u32,
    h: u32,
    x_lo: i64,
    x_hi: i64,
    z_lo: i64,
    z_hi: i64,
    n_min: i64,
    n_max: i64,
}

fn ceil_mantissa(v: f64, k: u32) -> i64 {
    -quantize_clamped(-v, k, -MANTISSA_LIMIT, MANTISSA_LIMIT)
}

impl CellMap {
    pub fn new(f: &MonotoneFn, k: u32, h: u32) -> Result<Self> {
        f.validate()?;
        if h >= k {
            return Err(Error::Parameter(format!("grid bits h={h} must be below k={k}")));
        }
        let negate = !f.is_increasing();
        let g = if negate { f.kind.negated() } else { f.kind };
        let x_lo = ceil_mantissa(f.domain.0, k);
        let x_hi = ceil_mantissa(f.domain.1, k);
        if x_lo >= x_hi {
            return Err(Error::Parameter("domain holds no grid point".into()));
        }
        let q = |x: i64| quantize_clamped(g.eval(mantissa_to_f64(x, k)), k, -MANTISSA_LIMIT, MANTISSA_LIMIT);
        let (z_lo, z_hi) = (q(x_lo), q(x_hi));
        let w = 1i64 << (k - h);
        let (a, b) = if f.strategy.grid_in_x() {
            (x_lo, x_hi)
        } else {
            (z_lo, z_hi)
        };
        Ok(CellMap {
            g,
            negate,
            strategy: f.strategy,
            k,
            h,
            x_lo,
            x_hi,
            z_lo,
            z_hi,
            n_min: a.div_euclid(w),
            n_max: -(-b).div_euclid(w),
        })
    }

    fn width(&self) -> i64 {
        1i64 << (self.k - self.h)
    }

    fn quant(&self, v: f64, lo: i64, hi: i64) -> i64 {
        quantize_clamped(v, self.k, lo, hi)
    }

    /// `x` endpoint of grid node `n`.
    fn xe(&self, n: i64) -> i64 {
        if self.strategy.grid_in_x() {
            (n * self.width()).clamp(self.x_lo, self.x_hi)
        } else {
            let z = self.ze(n);
            if z == self.z_lo {
                self.x_lo
            } else if z == self.z_hi {
                self.x_hi
            } else {
                self.quant(self.g.eval_inverse(mantissa_to_f64(z, self.k)), self.x_lo, self.x_hi)
            }
        }
    }

    /// `z` endpoint of grid node `n`.
    fn ze(&self, n: i64) -> i64 {
        if self.strategy.grid_in_x() {
            let x = self.xe(n);
            if x == self.x_lo {
                self.z_lo
            } else if x == self.x_hi {
                self.z_hi
            } else {
                self.quant(self.g.eval(mantissa_to_f64(x, self.k)), self.z_lo, self.z_hi)
            }
        } else {
            (n * self.width()).clamp(self.z_lo, self.z_hi)
        }
    }

    fn cell(&self, j: i64) -> InterpInterval {
        InterpInterval {
            index: j,
            x_lo: self.xe(j),
            x_hi: self.xe(j + 1),
            z_lo: self.ze(j),
            z_hi: self.ze(j + 1),
            k: self.k,
            strategy: self.strategy,
        }
    }

    fn round_to_node(&self, v: f64) -> Option<i64> {
        let m = (v * pow2(self.h)).round();
        if m.is_finite() {
            Some((m.clamp(self.n_min as f64, self.n_max as f64)) as i64)
        } else {
            None
        }
    }

    /// Largest node `n < n_max` with `e(n) ≤ v`.
    fn bisect(&self, v: i64, e: impl Fn(i64) -> i64) -> i64 {
        let (mut lo, mut hi) = (self.n_min, self.n_max);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if e(mid) <= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Cell of `v` along the non-uniform coordinate, trying the rounding guess
    /// first when the strategy allows it.
    fn locate(&self, v: i64, guess: Option<f64>, e: impl Fn(i64) -> i64) -> i64 {
        if self.strategy.uses_rounding() {
            if let Some(m) = guess.and_then(|g| self.round_to_node(g)) {
                let j = if v < e(m) { m - 1 } else { m };
                if j >= self.n_min && j < self.n_max && e(j) <= v && v < e(j + 1) {
                    return j;
                }
            }
        }
        self.bisect(v, e)
    }

    /// Mantissa of the increasing function's input for a caller's `x`.
    pub fn contains_x(&self, x: i64) -> bool {
        x >= self.x_lo && x < self.x_hi
    }

    pub fn interval_for_x(&self, x: i64) -> Result<InterpInterval> {
        if !self.contains_x(x) {
            return Err(Error::Domain(format!(
                "x={} outside [{}, {})",
                mantissa_to_f64(x, self.k),
                mantissa_to_f64(self.x_lo, self.k),
                mantissa_to_f64(self.x_hi, self.k)
            )));
        }
        let j = if self.strategy.grid_in_x() {
            x.div_euclid(self.width())
        } else {
            let guess = self.g.eval(mantissa_to_f64(x, self.k));
            self.locate(x, Some(guess), |n| self.xe(n))
        };
        Ok(self.cell(j))
    }

    /// Cell for an output mantissa of the increasing function.
    pub fn interval_for_z(&self, z: i64) -> Result<InterpInterval> {
        if z < self.z_lo || z >= self.z_hi {
            return Err(Error::Domain(format!(
                "z={} outside [{}, {})",
                mantissa_to_f64(z, self.k),
                mantissa_to_f64(self.z_lo, self.k),
                mantissa_to_f64(self.z_hi, self.k)
            )));
        }
        let j = if self.strategy.grid_in_x() {
            let guess = self.g.eval_inverse(mantissa_to_f64(z, self.k));
            self.locate(z, Some(guess), |n| self.ze(n))
        } else {
            z.div_euclid(self.width())
        };
        Ok(self.cell(j))
    }

    /// Bisection-only lookup on the same grid.
    pub fn interval_for_z_bisect(&self, z: i64) -> Result<InterpInterval> {
        if !self.strategy.grid_in_x() {
            return self.interval_for_z(z);
        }
        self.interval_for_z(z)?;
        Ok(self.cell(self.bisect(z, |n| self.ze(n))))
    }

    pub fn interval_for_x_bisect(&self, x: i64) -> Result<InterpInterval> {
        if self.strategy.grid_in_x() {
            return self.interval_for_x(x);
        }
        self.interval_for_x(x)?;
        Ok(self.cell(self.bisect(x, |n| self.xe(n))))
    }

    /// Number of cells and the index of the first one.
    pub fn cell_range(&self) -> (i64, i64) {
        (self.n_min, self.n_max)
    }

    pub fn cell_at(&self, j: i64) -> InterpInterval {
        self.cell(j)
    }

    pub fn negates(&self) -> bool {
        self.negate
    }

    pub fn z_range(&self) -> (i64, i64) {
        (self.z_lo, self.z_hi)
    }

    pub fn x_range(&self) -> (i64, i64) {
        (self.x_lo, self.x_hi)
    }
}

pub fn interval_for_x(x: i64, f: &MonotoneFn, h: u32, k: u32) -> Result<InterpInterval> {
    CellMap::new(f, k, h)?.interval_for_x(x)
}

/// `z` is an output of `f`; for decreasing functions it is negated first.
pub fn interval_for_z(z: i64, f: &MonotoneFn, h: u32, k: u32) -> Result<InterpInterval> {
    let m = CellMap::new(f, k, h)?;
    m.interval_for_z(if m.negate { -z } else { z })
}

/// Cell maps of a batch: one shared map, one per run of `stride` consecutive
/// elements, or one per element.
pub enum Maps<'a> {
    Shared(&'a CellMap),
    Strided(&'a [CellMap], usize),
    Each(&'a [CellMap]),
}

impl Maps<'_> {
    fn get(&self, i: usize) -> &CellMap {
        match self {
            Maps::Shared(m) => m,
            Maps::Strided(ms, stride) => &ms[i / stride],
            Maps::Each(ms) => &ms[i],
        }
    }
}

pub fn build_maps(fns: &[MonotoneFn], prec: &Precision, exec: Exec) -> Result<Vec<CellMap>> {
    exec.map(fns, |f| CellMap::new(f, prec.k, prec.h)).into_iter().collect()
}

struct Prepared {
    offset: i64,
    base: i64,
    r: u64,
    limit: i64,
}

fn prepare(cell: &InterpInterval, s: u64, max_r: u64, offset: i64, base: i64, limit: i64) -> Result<Prepared> {
    let r = interp_slope(cell, s)?.r().min(max_r);
    Ok(Prepared { offset, base, r, limit })
}

/// Apply the interpolated flow to every element of `xs` in place.
///
/// Elements are dealt round-robin into `prec.b` splits; splits run one after
/// another on the same auxiliary stream, and within a split all remainders
/// are decoded before any is encoded.
pub fn elem_forward_batch<C: UniformCoder>(
    xs: &mut [i64],
    maps: Maps<'_>,
    prec: &Precision,
    aux: &mut C,
    exec: Exec,
) -> Result<()> {
    let n = xs.len();
    let max_r = aux.max_alphabet();
    for g in 0..prec.b as usize {
        let idx: Vec<usize> = prec.split_indices(g, n).collect();
        if idx.is_empty() {
            continue;
        }
        let src: &[i64] = xs;
        let prep: Vec<Prepared> = exec
            .map(&idx, |&i| {
                let m = maps.get(i);
                let cell = m.interval_for_x(src[i])?;
                prepare(&cell, prec.s, max_r, src[i] - cell.x_lo, cell.z_lo, cell.dx())
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let offs: Vec<i64> = prep.iter().map(|p| p.offset).collect();
        let rs: Vec<u64> = prep.iter().map(|p| p.r).collect();
        let mut out = vec![0i64; idx.len()];
        mst_forward_batch(&offs, &rs, prec.s, aux, &mut out)?;
        for ((&i, p), z) in idx.iter().zip(&prep).zip(out) {
            let v = p.base + z;
            xs[i] = if maps.get(i).negate { -v } else { v };
        }
    }
    Ok(())
}

/// Exact inverse of [`elem_forward_batch`].
pub fn elem_inverse_batch<C: UniformCoder>(
    zs: &mut [i64],
    maps: Maps<'_>,
    prec: &Precision,
    aux: &mut C,
    exec: Exec,
) -> Result<()> {
    let n = zs.len();
    let max_r = aux.max_alphabet();
    for g in (0..prec.b as usize).rev() {
        let idx: Vec<usize> = prec.split_indices(g, n).collect();
        if idx.is_empty() {
            continue;
        }
        let src: &[i64] = zs;
        let prep: Vec<Prepared> = exec
            .map(&idx, |&i| {
                let m = maps.get(i);
                let z = if m.negate { -src[i] } else { src[i] };
                let cell = m.interval_for_z(z)?;
                prepare(&cell, prec.s, max_r, z - cell.z_lo, cell.x_lo, cell.dx())
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let offs: Vec<i64> = prep.iter().map(|p| p.offset).collect();
        let rs: Vec<u64> = prep.iter().map(|p| p.r).collect();
        let mut out = vec![0i64; idx.len()];
        mst_inverse_batch(&offs, &rs, prec.s, aux, &mut out)?;
        for ((&i, p), x) in idx.iter().zip(&prep).zip(out) {
            if x < 0 || x >= p.limit {
                return Err(Error::Corrupt(format!(
                    "element {i} decoded outside its interpolation cell"
                )));
            }
            zs[i] = p.base + x;
        }
    }
    Ok(())
}

/// Single-value forward transform.
pub fn elem_forward<C: UniformCoder>(x: i64, f: &MonotoneFn, prec: &Precision, aux: &mut C) -> Result<i64> {
    let m = CellMap::new(f, prec.k, prec.h)?;
    let mut v = [x];
    elem_forward_batch(&mut v, Maps::Shared(&m), prec, aux, Exec::Sequential)?;
    Ok(v[0])
}

pub fn elem_inverse<C: UniformCoder>(z: i64, f: &MonotoneFn, prec: &Precision, aux: &mut C) -> Result<i64> {
    let m = CellMap::new(f, prec.k, prec.h)?;
    let mut v = [z];
    elem_inverse_batch(&mut v, Maps::Shared(&m), prec, aux, Exec::Sequential)?;
    Ok(v[0])
}

/// Net bits a forward pass adds for value `x`: `log₂ S − log₂ R` of its cell.
pub fn elem_codelength(x: i64, map: &CellMap, prec: &Precision, max_r: u64) -> Result<f64> {
    let cell = map.interval_for_x(x)?;
    let r = interp_slope(&cell, prec.s)?.r().min(max_r);
    Ok((prec.s as f64).log2() - (r as f64).log2())
}
