//! Surrogate per-layer performance and resource models.
//!
//! Each hardware stream moves at most one word per cycle. A vertex with
//! parallelism `p` retires `p` MACs per cycle, so its latency is the larger of
//! its compute time and the time needed to stream its input and output.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Vertex, VertexKind};
use crate::scalar::Scalar;

/// Rates, sizes and latencies of one vertex at a given parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexPerf<T> {
    /// Standard input rate summed over slots (words/cycle).
    pub r_in: T,
    /// Input feature-map size summed over slots (words).
    pub sigma_in: u64,
    pub sigma_out: u64,
    /// Words that must be consumed before the first output word.
    pub rho: T,
    /// Cycles to process one frame at the standard rate.
    pub lambda: T,
    pub r_out: T,
    pub p: u64,
}

impl<T: Scalar> VertexPerf<T> {
    /// `λ + ρ`: the span over which a producer delivers one frame while its
    /// pipeline fills.
    pub fn window(&self) -> T {
        self.lambda + self.rho
    }

    /// Output word `j` (0-based, within a frame) depends on this many input words.
    pub fn words_needed(&self, j: u64) -> u64 {
        words_needed(self.sigma_in, self.sigma_out, self.rho.ceil_u64(), j)
    }
}

/// Input words that must have been consumed before output word `j` can be
/// produced. Windowed operators ramp linearly from `rho` at the first output
/// to the whole input at the last one; rate-changing pointwise operators
/// consume proportionally.
pub fn words_needed(sigma_in: u64, sigma_out: u64, rho: u64, j: u64) -> u64 {
    let proportional = ((j + 1) * sigma_in).div_ceil(sigma_out.max(1));
    let ramp = rho + (j * sigma_in.saturating_sub(rho)) / sigma_out.saturating_sub(1).max(1);
    proportional.max(ramp).min(sigma_in)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceVector {
    pub dsp: u64,
    pub lut: u64,
    pub ff: u64,
    pub bram18k: u64,
    pub uram: u64,
}

impl ResourceVector {
    pub fn new(dsp: u64, lut: u64, ff: u64, bram18k: u64, uram: u64) -> Self {
        Self { dsp, lut, ff, bram18k, uram }
    }

    /// Component-wise `<=`.
    pub fn fits_in(&self, cap: &ResourceVector) -> bool {
        self.dsp <= cap.dsp && self.lut <= cap.lut && self.ff <= cap.ff && self.bram18k <= cap.bram18k && self.uram <= cap.uram
    }

    pub fn scale(&self, k: u64) -> Self {
        Self {
            dsp: self.dsp * k,
            lut: self.lut * k,
            ff: self.ff * k,
            bram18k: self.bram18k * k,
            uram: self.uram * k,
        }
    }

    /// `(name, used, available)` for every component.
    pub fn components(&self, cap: &ResourceVector) -> [(&'static str, u64, u64); 5] {
        [
            ("DSP", self.dsp, cap.dsp),
            ("LUT", self.lut, cap.lut),
            ("FF", self.ff, cap.ff),
            ("BRAM", self.bram18k, cap.bram18k),
            ("URAM", self.uram, cap.uram),
        ]
    }

    /// First component exceeding `cap`, if any.
    pub fn first_violation(&self, cap: &ResourceVector) -> Option<(&'static str, u64, u64)> {
        self.components(cap).into_iter().find(|(_, u, a)| u > a)
    }
}

impl Add for ResourceVector {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            dsp: self.dsp + o.dsp,
            lut: self.lut + o.lut,
            ff: self.ff + o.ff,
            bram18k: self.bram18k + o.bram18k,
            uram: self.uram + o.uram,
        }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// `a + b·p`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub f64, pub f64);

impl Affine {
    fn eval(&self, p: u64) -> u64 {
        (self.0 + self.1 * p as f64).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    pub dsp: Affine,
    pub lut: Affine,
    pub ff: Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamCost {
    pub lut: u64,
    pub ff: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecCosts {
    pub rle: StreamCost,
    pub huffman: StreamCost,
}

/// Device-independent logic cost coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub kinds: BTreeMap<String, KindCost>,
    pub dsp_factor_32bit: u64,
    pub codec: CodecCosts,
    pub dma_port: StreamCost,
}

const DEFAULT_COST_TABLE: &str = include_str!("../fixtures/cost_table.json");

impl Default for CostTable {
    fn default() -> Self {
        Self::parse(DEFAULT_COST_TABLE).expect("bundled cost table is valid")
    }
}

impl CostTable {
    pub fn parse(text: &str) -> Result<Self> {
        let t: CostTable = serde_json::from_str(text).map_err(|e| Error::Schema(format!("cost table: {e}")))?;
        for k in VertexKind::all() {
            if !t.kinds.contains_key(k.name()) {
                return Err(Error::Schema(format!("cost table: missing kind `{k}`")));
            }
        }
        Ok(t)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self, k: VertexKind) -> &KindCost {
        &self.kinds[k.name()]
    }
}

fn conv_macs(v: &Vertex) -> u64 {
    let cin = v.input_channels() / v.attrs.groups;
    v.output_shape.positions() * v.attrs.kernel_volume() * cin * v.output_shape.channels
}

fn pool_ops(v: &Vertex) -> u64 {
    v.output_shape.positions() * v.attrs.kernel_volume() * v.output_shape.channels
}

/// Multiply-accumulates per frame (zero for kinds without arithmetic).
pub fn macs(v: &Vertex) -> u64 {
    match v.kind {
        VertexKind::Conv => conv_macs(v),
        _ => 0,
    }
}

fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n % i == 0 {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Realisable parallelism levels in increasing order.
pub fn valid_parallelism(v: &Vertex) -> Vec<u64> {
    match v.kind {
        VertexKind::Conv => divisors(v.input_channels() / v.attrs.groups * v.output_shape.channels),
        VertexKind::Pool => divisors(v.output_shape.channels),
        _ => vec![1],
    }
}

pub fn is_valid_parallelism(v: &Vertex, p: u64) -> bool {
    match v.kind {
        VertexKind::Conv => p > 0 && (v.input_channels() / v.attrs.groups * v.output_shape.channels) % p == 0,
        VertexKind::Pool => p > 0 && v.output_shape.channels % p == 0,
        _ => p == 1,
    }
}

/// Line-buffer fill of a sliding window over the (unpadded) input.
fn line_buffer(v: &Vertex) -> u64 {
    let s = v.input_shapes[0];
    let [kd, kh, kw] = v.attrs.kernel;
    let c = s.channels;
    kd.saturating_sub(1) * s.height * s.width * c + kh.saturating_sub(1) * s.width * c + kw * c
}

pub fn vertex_perf<T: Scalar>(v: &Vertex, p: u64) -> Result<VertexPerf<T>> {
    if !is_valid_parallelism(v, p) {
        return Err(Error::InvalidParallelism { vertex: v.id.clone(), p });
    }
    let sigma_in = v.input_words();
    let sigma_out = v.output_words();
    let stream = sigma_in.max(sigma_out);
    let slots = v.input_shapes.len() as u64;
    let (lambda, rho) = match v.kind {
        VertexKind::Conv => (T::from_ratio(conv_macs(v), p).max_of(T::from_u64(stream)), line_buffer(v)),
        VertexKind::Pool => (T::from_ratio(pool_ops(v), p).max_of(T::from_u64(stream)), line_buffer(v)),
        VertexKind::GlobalPool => (T::from_u64(sigma_in), sigma_in),
        VertexKind::Add => (T::from_u64(sigma_out), slots),
        VertexKind::Relu | VertexKind::Concat | VertexKind::Split | VertexKind::Upsample => (T::from_u64(stream), 1),
    };
    // ρ must cover the first output's real dependency and never exceed the frame
    let rho = rho.max(sigma_in.div_ceil(sigma_out)).min(sigma_in).max(1);
    Ok(VertexPerf {
        r_in: T::from_u64(sigma_in) / lambda,
        sigma_in,
        sigma_out,
        rho: T::from_u64(rho),
        lambda,
        r_out: T::from_u64(sigma_out) / lambda,
        p,
    })
}

/// Logic resources of the compute engine. On-chip memory is accounted
/// separately by the memory allocator.
pub fn vertex_resources(v: &Vertex, p: u64, word_length: u32, costs: &CostTable) -> ResourceVector {
    let c = costs.kind(v.kind);
    let factor = if word_length > 16 { costs.dsp_factor_32bit } else { 1 };
    ResourceVector {
        dsp: c.dsp.eval(p) * factor,
        lut: c.lut.eval(p),
        ff: c.ff.eval(p),
        bram18k: 0,
        uram: 0,
    }
}

/// Weight words of a Conv vertex: `K_d·K_h·K_w · C_in/groups · C_out`.
pub fn weight_volume(v: &Vertex) -> Result<u64> {
    match v.kind {
        VertexKind::Conv => Ok(v.attrs.kernel_volume() * (v.input_channels() / v.attrs.groups) * v.output_shape.channels),
        _ => Err(Error::NoWeights(v.id.clone())),
    }
}
