//! Branch-buffer sizing, activation eviction, weight fragmentation and
//! on-chip memory packing.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, Geometry};
use crate::error::{Error, Result};
use crate::estimator::{delays, effective_windows, initiation_interval};
use crate::graph::{EdgeId, ModelGraph, Vertex, VertexId, VertexKind};
use crate::layer_models::{macs, weight_volume, ResourceVector, VertexPerf};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Depth of FIFOs that do not sit on a reconvergent branch.
    pub default_fifo_depth: u64,
    /// Extra words added to every sized branch buffer.
    pub buffer_slack: u64,
    /// Fragmentation ratios are multiples of `1/dynamic_steps`.
    pub dynamic_steps: u64,
    /// Stores at most this deep go to distributed (LUT) RAM.
    pub lutram_max_depth: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { default_fifo_depth: 64, buffer_slack: 32, dynamic_steps: 16, lutram_max_depth: 64 }
    }
}

/// Required depth of every edge FIFO (indexed by edge).
///
/// An edge into a vertex with several in-graph producers must absorb the
/// skew between its producer and the slowest sibling producer:
/// `ceil(words_e/min(W_u, II)·(D_other − D_u)) + slack`, with `D` the
/// modelled fill delays. The first frame is emitted over the window `W_u`;
/// later frames come every `II` (largest `λ`), which is faster when `W_u`
/// carries a long fill. The skew may span several frames, so the depth is
/// not capped at one tensor. Other edges get the default depth.
pub fn buffer_depths<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>], cfg: &MemoryConfig) -> Vec<u64> {
    let d = delays(g, perf);
    let w = effective_windows(g, perf);
    let ii = perf.iter().map(|p| p.lambda).fold(T::zero(), T::max_of);
    g.edge_ids().map(|e| depth_with(g, e, &d, &w, ii, cfg)).collect()
}

fn depth_with<T: Scalar>(g: &ModelGraph, e: EdgeId, d: &[T], w: &[T], ii: T, cfg: &MemoryConfig) -> u64 {
    let edge = g.edge(e);
    let siblings: Vec<VertexId> = g
        .in_edges(edge.dst)
        .iter()
        .flatten()
        .filter(|x| **x != e)
        .map(|x| g.edge(*x).src)
        .collect();
    if siblings.is_empty() {
        return cfg.default_fifo_depth.min(edge.words).max(1);
    }
    let other = siblings.iter().map(|s| d[s.0]).fold(T::zero(), T::max_of);
    let skew = if other > d[edge.src.0] { other - d[edge.src.0] } else { T::zero() };
    let window = if ii > T::zero() && ii < w[edge.src.0] { ii } else { w[edge.src.0] };
    let rate = T::from_u64(edge.words) / window;
    ((rate * skew).ceil_u64() + cfg.buffer_slack).max(1)
}

/// `d_b` of a single edge.
pub fn branch_buffer_depth<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>], e: EdgeId, cfg: &MemoryConfig) -> Result<u64> {
    if e.0 >= g.edges().len() {
        return Err(Error::Config(format!("edge {} is not in the graph", e.0)));
    }
    let d = delays(g, perf);
    let w = effective_windows(g, perf);
    let ii = perf.iter().map(|p| p.lambda).fold(T::zero(), T::max_of);
    Ok(depth_with(g, e, &d, &w, ii, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub d_b: u64,
    pub d_b_prime: u64,
    pub t_db: u64,
}

impl BufferSpec {
    pub fn for_device(d_b: u64, device: &DeviceSpec) -> Self {
        Self { d_b, d_b_prime: device.residual_fifo_depth(), t_db: device.dma_latency_cycles }
    }

    /// Eviction does not add stalls when the original buffer is deeper than
    /// both the residual FIFOs and the DMA round trip.
    pub fn eviction_legal(&self) -> bool {
        self.d_b > self.d_b_prime.max(self.t_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionResult {
    pub delta_d: u64,
    pub delta_bw: f64,
    pub r: f64,
    pub c_bar: f64,
    pub alpha: f64,
}

/// Streaming rate of an edge: its words over the shorter of the producer's
/// delivery window and the subgraph interval.
pub fn edge_rate<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>], e: EdgeId) -> f64 {
    let w = effective_windows(g, perf);
    let ii = initiation_interval(perf).map(Scalar::to_f64).unwrap_or(f64::INFINITY);
    let span = w[g.edge(e).src.0].to_f64().min(ii);
    g.edge(e).words as f64 / span
}

/// Savings and cost of spilling an edge buffer off-chip.
///
/// `Δd = d_b − d_b'` and `ΔBW = r·c̄·(1+α)` with `α = 1` for in-order reads.
pub fn evict_activation(buffer: BufferSpec, r: f64, c_bar: f64, in_order: bool, device: &DeviceSpec, label: &str) -> Result<EvictionResult> {
    if !buffer.eviction_legal() {
        return Err(Error::IllegalEviction {
            edge: label.to_owned(),
            d_b: buffer.d_b,
            d_b_prime: buffer.d_b_prime,
            t_db: buffer.t_db,
        });
    }
    let alpha = if in_order { 1.0 } else { device.alpha_random };
    Ok(EvictionResult { delta_d: buffer.d_b - buffer.d_b_prime, delta_bw: r * c_bar * (1.0 + alpha), r, c_bar, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationResult {
    pub m: f64,
    /// Original weight store size (words).
    pub d: u64,
    pub delta_d: f64,
    pub delta_bw: f64,
    /// Weight consumption rate (words/cycle).
    pub r: f64,
    pub c: f64,
}

/// Weight words read per cycle: one per MAC lane while computing.
pub fn weight_rate<T: Scalar>(v: &Vertex, perf: &VertexPerf<T>) -> f64 {
    macs(v) as f64 / perf.lambda.to_f64()
}

/// Move a fraction `m` of a weight store to a dynamic region streamed from
/// off-chip: `Δd = m·d`, `ΔBW = m·r·c`.
pub fn fragment_weights<T: Scalar>(v: &Vertex, m: f64, perf: &VertexPerf<T>, c: f64) -> Result<FragmentationResult> {
    let d = weight_volume(v)?;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("fragmentation ratio {m} outside [0,1]")));
    }
    let r = weight_rate(v, perf);
    Ok(FragmentationResult { m, d, delta_d: m * d as f64, delta_bw: m * r * c, r, c })
}

/// Words of weight storage remaining on-chip after fragmentation.
pub fn static_weight_words(d: u64, m: f64) -> u64 {
    ((1.0 - m) * d as f64).ceil() as u64
}

/// `L·Δd/ΔBW`; free savings score `+∞`.
pub fn eviction_benefit(word_length: u32, delta_d: f64, delta_bw: f64) -> f64 {
    if delta_bw == 0.0 {
        f64::INFINITY
    } else {
        word_length as f64 * delta_d / delta_bw
    }
}

// ---------------------------------------------------------------------------
// Packing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primitive {
    Bram,
    Uram,
    Lutram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreKind {
    Weights(String),
    /// One-burst buffer feeding a fragmented weight store.
    DynamicWeights(String),
    LineBuffer(String),
    Fifo(String),
    /// Residual FIFOs of an evicted edge.
    Residual(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Store {
    pub kind: StoreKind,
    pub width: u64,
    pub depth: u64,
}

impl Store {
    pub fn bits(&self) -> u64 {
        self.width * self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub store: Store,
    pub primitive: Primitive,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryAllocation {
    pub assignments: Vec<Assignment>,
    /// BRAM18K, URAM and LUT (as distributed RAM) totals.
    pub totals: ResourceVector,
}

impl MemoryAllocation {
    pub fn utilization(&self, device: &DeviceSpec) -> (f64, f64) {
        (ratio(self.totals.bram18k, device.bram18k), ratio(self.totals.uram, device.uram))
    }
}

fn ratio(used: u64, cap: u64) -> f64 {
    if cap == 0 {
        if used == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        used as f64 / cap as f64
    }
}

/// Primitives of geometry `g` needed to cover `width × depth`.
pub fn tiles(width: u64, depth: u64, g: Geometry) -> u64 {
    width.div_ceil(g.width) * depth.div_ceil(g.depth)
}

pub fn bram_count(width: u64, depth: u64, device: &DeviceSpec) -> u64 {
    device.bram_geometries.iter().map(|g| tiles(width, depth, *g)).min().unwrap_or(u64::MAX)
}

pub fn uram_count(width: u64, depth: u64, device: &DeviceSpec) -> u64 {
    tiles(width, depth, device.uram_geometry)
}

/// Capacity-bound primitive count ignoring aspect ratios.
pub fn ideal_count(bits: u64, g: Geometry) -> u64 {
    bits.div_ceil(g.bits())
}

fn option_count(s: &Store, p: Primitive, device: &DeviceSpec) -> Option<u64> {
    match p {
        Primitive::Bram => Some(bram_count(s.width, s.depth, device)),
        Primitive::Uram => (device.uram > 0).then(|| uram_count(s.width, s.depth, device)),
        Primitive::Lutram => Some(s.bits().div_ceil(device.lutram_bits_per_lut)),
    }
}

/// Pack stores onto BRAM/URAM/LUTRAM so that the largest utilisation ratio
/// is as small as the greedy search can make it. `lut_budget` is the number
/// of LUTs available for distributed RAM.
pub fn allocate_on_chip(stores: &[Store], device: &DeviceSpec, lut_budget: u64, cfg: &MemoryConfig) -> Result<MemoryAllocation> {
    let mut order: Vec<usize> = (0..stores.len()).collect();
    order.sort_by(|a, b| stores[*b].bits().cmp(&stores[*a].bits()).then(a.cmp(b)));
    let mut choice: Vec<(Primitive, u64)> = vec![(Primitive::Bram, 0); stores.len()];
    let (mut bram, mut uram, mut luts) = (0u64, 0u64, 0u64);
    let score = |b: u64, u: u64| ratio(b, device.bram18k).max(ratio(u, device.uram));

    for &i in &order {
        let s = &stores[i];
        if s.depth <= cfg.lutram_max_depth {
            let n = option_count(s, Primitive::Lutram, device).unwrap_or(0);
            if luts + n <= lut_budget {
                luts += n;
                choice[i] = (Primitive::Lutram, n);
                continue;
            }
        }
        let b = option_count(s, Primitive::Bram, device).unwrap_or(u64::MAX);
        let u = option_count(s, Primitive::Uram, device);
        let take_uram = match u {
            Some(u) => score(bram, uram + u) < score(bram + b, uram),
            None => false,
        };
        if take_uram {
            let u = u.unwrap_or(0);
            uram += u;
            choice[i] = (Primitive::Uram, u);
        } else {
            bram += b;
            choice[i] = (Primitive::Bram, b);
        }
    }

    // rebalancing sweep
    if device.uram > 0 {
        for _ in 0..stores.len().max(1) * 4 {
            let mut improved = false;
            for &i in &order {
                let (p, n) = choice[i];
                let (nb, nu, np, nn) = match p {
                    Primitive::Bram => {
                        let u = option_count(&stores[i], Primitive::Uram, device).unwrap_or(u64::MAX);
                        (bram - n, uram.saturating_add(u), Primitive::Uram, u)
                    }
                    Primitive::Uram => {
                        let b = option_count(&stores[i], Primitive::Bram, device).unwrap_or(u64::MAX);
                        (bram.saturating_add(b), uram - n, Primitive::Bram, b)
                    }
                    Primitive::Lutram => continue,
                };
                if score(nb, nu) < score(bram, uram) {
                    bram = nb;
                    uram = nu;
                    choice[i] = (np, nn);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    let totals = ResourceVector { dsp: 0, lut: luts, ff: 0, bram18k: bram, uram };
    if bram > device.bram18k {
        return Err(Error::Infeasible { resource: "BRAM18K".into(), needed: bram, available: device.bram18k });
    }
    if uram > device.uram {
        return Err(Error::Infeasible { resource: "URAM".into(), needed: uram, available: device.uram });
    }
    Ok(MemoryAllocation {
        assignments: stores
            .iter()
            .zip(choice)
            .map(|(s, (p, n))| Assignment { store: s.clone(), primitive: p, count: n })
            .collect(),
        totals,
    })
}

/// Sliding-window line buffer of a vertex, if it has one.
pub fn line_buffer_store<T: Scalar>(v: &Vertex, perf: &VertexPerf<T>, word_length: u32) -> Option<Store> {
    let windowed = matches!(v.kind, VertexKind::Conv | VertexKind::Pool) && v.attrs.kernel_volume() > 1;
    windowed.then(|| Store { kind: StoreKind::LineBuffer(v.id.clone()), width: word_length as u64, depth: perf.rho.ceil_u64() })
}

/// Static weight store plus, when fragmented, its one-burst dynamic buffer.
pub fn weight_stores(v: &Vertex, p: u64, m: f64, word_length: u32, burst: u64) -> Vec<Store> {
    let Ok(volume) = weight_volume(v) else { return Vec::new() };
    let width = p * word_length as u64;
    let mut out = Vec::new();
    let on_chip = static_weight_words(volume, m);
    if on_chip > 0 {
        out.push(Store { kind: StoreKind::Weights(v.id.clone()), width, depth: on_chip.div_ceil(p) });
    }
    if m > 0.0 {
        out.push(Store { kind: StoreKind::DynamicWeights(v.id.clone()), width, depth: burst });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceSpec {
        DeviceSpec::parse(
            r#"{"name":"d","freq_mhz":200,"dsp":100,"lut":10000,"ff":10000,"bram18k":100,"uram":50,
            "bandwidth_gbps":100,"reconfig_time_s":0.1,"dma_burst_words":64,"dma_latency_cycles":512,
            "alpha_random":2.0,"max_dma_ports":2}"#,
        )
        .unwrap()
    }

    #[test]
    fn eviction_closed_form() {
        let d = device();
        let r = evict_activation(BufferSpec { d_b: 1000, d_b_prime: 128, t_db: 512 }, 1.0, 1.0, true, &d, "e").unwrap();
        assert_eq!(r.delta_d, 872);
        assert_eq!(r.delta_bw, 2.0);
        assert_eq!(eviction_benefit(8, r.delta_d as f64, r.delta_bw), 3488.0);
        let random = evict_activation(BufferSpec { d_b: 1000, d_b_prime: 128, t_db: 512 }, 1.0, 1.0, false, &d, "e").unwrap();
        assert_eq!(random.delta_bw, 3.0);
        let err = evict_activation(BufferSpec { d_b: 500, d_b_prime: 128, t_db: 512 }, 1.0, 1.0, true, &d, "x→y").unwrap_err();
        assert!(matches!(err, Error::IllegalEviction { .. }));
    }

    #[test]
    fn benefit_edge_cases() {
        assert_eq!(eviction_benefit(8, 10.0, 0.0), f64::INFINITY);
        assert_eq!(eviction_benefit(8, 100.0, 1.0), 2.0 * eviction_benefit(8, 100.0, 2.0));
    }

    #[test]
    fn single_primitive_fits() {
        let d = device();
        assert_eq!(bram_count(8, 512, &d), 1);
        assert_eq!(uram_count(72, 4096, &d), 1);
        let store = Store { kind: StoreKind::Fifo("e".into()), width: 8, depth: 512 };
        let a = allocate_on_chip(&[store], &d, 1000, &MemoryConfig::default()).unwrap();
        assert_eq!(a.totals.bram18k + a.totals.uram, 1);
    }

    #[test]
    fn shallow_store_uses_lutram() {
        let d = device();
        let store = Store { kind: StoreKind::Fifo("e".into()), width: 8, depth: 64 };
        let a = allocate_on_chip(&[store], &d, 1000, &MemoryConfig::default()).unwrap();
        assert_eq!(a.totals.lut, 8);
        assert_eq!(a.assignments[0].primitive, Primitive::Lutram);
    }

    #[test]
    fn infeasible_names_resource() {
        let d = device();
        let stores: Vec<Store> = (0..200)
            .map(|i| Store { kind: StoreKind::Fifo(format!("e{i}")), width: 72, depth: 4096 })
            .collect();
        match allocate_on_chip(&stores, &d, 0, &MemoryConfig::default()) {
            Err(Error::Infeasible { resource, .. }) => assert!(resource == "BRAM18K" || resource == "URAM"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn balances_bram_and_uram() {
        let d = device();
        let stores: Vec<Store> = (0..40)
            .map(|i| Store { kind: StoreKind::Fifo(format!("e{i}")), width: 36, depth: 2048 })
            .collect();
        let a = allocate_on_chip(&stores, &d, 0, &MemoryConfig::default()).unwrap();
        let (b, u) = a.utilization(&d);
        assert!((b - u).abs() < 0.15, "bram {b} uram {u}");
    }
}
