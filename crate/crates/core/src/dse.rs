//! Greedy design-space exploration.
//!
//! The graph is cut into contiguous ranges of a topological order, each
//! executed as one reconfiguration of the device. Starting from the finest
//! legal cut at minimal parallelism, every subgraph is grown (parallelism of
//! its bottleneck), packed on-chip and, when it does not fit, relieved by
//! evicting edge buffers or fragmenting weight stores in descending
//! `L·Δd/ΔBW` order. Adjacent subgraphs are then merged while that improves
//! throughput at the requested batch size.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{codec_overhead, estimate_ratio, stream_ratio, synthetic_calibration, synthetic_weights, Scheme, SyntheticConfig, WordStream};
use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::estimator::{graph_perf, graph_pipeline_depth, initiation_interval, performance, PerformanceReport, SubgraphTiming};
use crate::graph::{EdgeId, ModelGraph, VertexId, VertexKind};
use crate::layer_models::{valid_parallelism, vertex_perf, vertex_resources, weight_volume, CostTable, ResourceVector, VertexPerf};
use crate::memory::{
    allocate_on_chip, buffer_depths, edge_rate, eviction_benefit, evict_activation, line_buffer_store, weight_rate, weight_stores, BufferSpec,
    MemoryConfig, Store, StoreKind,
};
use crate::simulator::{DmaEdge, SimConfig};

type Perf = VertexPerf<f64>;

/// Number of synthetic activation maps in a calibration set.
pub const CALIBRATION_MAPS: usize = 32;
/// Weight words encoded per layer to measure its compile-time ratio.
pub const WEIGHT_SAMPLE_WORDS: usize = 1 << 14;
/// Spread of the synthetic weight distribution (in quantisation steps).
pub const WEIGHT_SPREAD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseConfig {
    pub batch: u64,
    /// Kinds a subgraph may start at; `None` allows any vertex.
    pub boundary_kinds: Option<BTreeSet<VertexKind>>,
    pub max_merge_rounds: usize,
    pub memory: MemoryConfig,
    /// Pipeline-depth refinement steps allowed per vertex once the
    /// bottleneck is saturated.
    pub depth_steps_per_vertex: usize,
}

impl Default for DseConfig {
    fn default() -> Self {
        Self { batch: 1, boundary_kinds: None, max_merge_rounds: 10_000, memory: MemoryConfig::default(), depth_steps_per_vertex: 2 }
    }
}

/// Compression ratios fed to the bandwidth model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub scheme: Scheme,
    /// `c̄` of evicted activations.
    pub activation: f64,
    /// Compile-time `c` of each weight-bearing vertex.
    pub weights: BTreeMap<String, f64>,
}

impl CodecModel {
    /// No compression: every ratio is one.
    pub fn raw() -> Self {
        Self { scheme: Scheme::None, activation: 1.0, weights: BTreeMap::new() }
    }

    pub fn weight_ratio(&self, id: &str) -> f64 {
        self.weights.get(id).copied().unwrap_or(1.0)
    }

    /// Measure every ratio by encoding the seeded calibration data.
    pub fn calibrate(g: &ModelGraph, scheme: Scheme, seed: u64) -> Result<Self> {
        if scheme == Scheme::None {
            return Ok(Self::raw());
        }
        let activation = estimate_ratio(&calibration_set(g, seed)?, scheme)?.c_bar;
        let mut weights = BTreeMap::new();
        for v in g.vertex_ids() {
            if let Some(sample) = weight_sample(g, v, seed)? {
                weights.insert(g.vertex(v).id.clone(), stream_ratio(&sample, scheme, None)?);
            }
        }
        Ok(Self { scheme, activation, weights })
    }
}

/// Activation maps used to calibrate `c̄`.
pub fn calibration_set(g: &ModelGraph, seed: u64) -> Result<Vec<WordStream>> {
    synthetic_calibration(CALIBRATION_MAPS, &SyntheticConfig::default(), g.word_length, seed)
}

/// Weight words encoded to obtain the compile-time ratio of `v`.
pub fn weight_sample(g: &ModelGraph, v: VertexId, seed: u64) -> Result<Option<WordStream>> {
    let Ok(volume) = weight_volume(g.vertex(v)) else { return Ok(None) };
    let count = (volume as usize).min(WEIGHT_SAMPLE_WORDS);
    let layer_seed = seed ^ (v.0 as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    synthetic_weights(count, g.word_length, WEIGHT_SPREAD, layer_seed).map(Some)
}

// ---------------------------------------------------------------------------
// Plan types

/// Per-vertex design choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub vertex: String,
    /// Reads an input from off-chip (graph input or earlier subgraph).
    pub s_i: bool,
    /// Writes an output off-chip.
    pub s_o: bool,
    pub p: u64,
    /// Has an evicted incoming edge.
    pub a_i: bool,
    /// Has an evicted outgoing edge.
    pub a_o: bool,
    pub m_frag: f64,
}

/// FIFO between two vertices of one subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferDecision {
    pub src: String,
    pub dst: String,
    pub slot: usize,
    pub label: String,
    pub words: u64,
    pub d_b: u64,
    pub evicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionDecision {
    pub label: String,
    pub src: String,
    pub dst: String,
    pub slot: usize,
    pub d_b: u64,
    pub d_b_prime: u64,
    pub t_db: u64,
    pub r: f64,
    pub c_bar: f64,
    pub alpha: f64,
    pub delta_d: u64,
    pub delta_bw: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentDecision {
    pub vertex: String,
    pub m: f64,
    /// Weight words of the layer.
    pub d: u64,
    pub r: f64,
    pub c: f64,
    pub delta_d: f64,
    pub delta_bw: f64,
    /// Score of each `1/steps` increment.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphPlan {
    pub index: usize,
    /// Member vertices in execution order.
    pub vertices: Vec<String>,
    pub design: Vec<DesignVector>,
    pub buffers: Vec<BufferDecision>,
    pub evictions: Vec<EvictionDecision>,
    pub fragments: Vec<FragmentDecision>,
    pub timing: SubgraphTiming,
    pub logic: ResourceVector,
    /// Codec and DMA engines.
    pub overhead: ResourceVector,
    pub memory: ResourceVector,
    pub resources: ResourceVector,
    /// Off-chip traffic in words/cycle.
    pub bandwidth_words: f64,
    pub bandwidth_gbps: f64,
    /// Part of the traffic that is subgraph input/output.
    pub boundary_words: f64,
    pub dma_streams: u64,
    pub dma_ports: u64,
}

impl SubgraphPlan {
    pub fn p_of(&self, id: &str) -> Option<u64> {
        self.design.iter().find(|d| d.vertex == id).map(|d| d.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub dsp: u64,
    pub lut: u64,
    pub ff: u64,
    pub bram18k: u64,
    pub uram: u64,
    pub bandwidth_gbps: f64,
}

/// One DSE decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub pass: u8,
    pub subgraph: usize,
    pub target: String,
    pub action: String,
    pub score: Option<f64>,
    pub ledger_after: Ledger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPlan {
    pub model: String,
    pub device: String,
    pub batch: u64,
    pub codec: Scheme,
    pub word_length: u32,
    pub freq_hz: f64,
    pub reconfig_time_s: f64,
    pub subgraphs: Vec<SubgraphPlan>,
    pub performance: PerformanceReport,
    pub audit: Vec<AuditRecord>,
}

impl DesignPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("plan: {e}")))
    }

    pub fn audit_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.audit {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn timings(&self) -> Vec<SubgraphTiming> {
        self.subgraphs.iter().map(|s| s.timing).collect()
    }

    /// Re-evaluate the batch latency model at another batch size.
    pub fn performance_at(&self, b: u64) -> Result<PerformanceReport> {
        performance(&self.timings(), b, self.freq_hz, self.reconfig_time_s)
    }

    pub fn subgraph_of(&self, id: &str) -> Option<usize> {
        self.subgraphs.iter().position(|s| s.vertices.iter().any(|v| v == id))
    }
}

// ---------------------------------------------------------------------------
// Constraint checking

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Resource,
    Bandwidth,
    Dependency,
    Coverage,
    Eviction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub subgraph: usize,
    pub constraint: Constraint,
    pub what: String,
    /// Excess over the limit (resource units or Gbps); 1 for structural faults.
    pub amount: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "subgraph {}: {:?} `{}` exceeded by {}", self.subgraph, self.constraint, self.what, self.amount)
    }
}

/// Every violated resource, bandwidth, dependency and eviction-legality
/// constraint of `plan`.
pub fn check_constraints(g: &ModelGraph, plan: &DesignPlan, device: &DeviceSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if plan.subgraphs.is_empty() {
        return out;
    }
    let mut home: HashMap<&str, usize> = HashMap::new();
    for (i, s) in plan.subgraphs.iter().enumerate() {
        for v in &s.vertices {
            if home.insert(v.as_str(), i).is_some() {
                out.push(Violation { subgraph: i, constraint: Constraint::Coverage, what: format!("{v} placed twice"), amount: 1.0 });
            }
        }
    }
    for v in g.vertices() {
        if !home.contains_key(v.id.as_str()) {
            out.push(Violation { subgraph: plan.subgraphs.len(), constraint: Constraint::Coverage, what: format!("{} not placed", v.id), amount: 1.0 });
        }
    }
    let cap = device.resources();
    for (i, s) in plan.subgraphs.iter().enumerate() {
        for name in &s.vertices {
            let Some(v) = g.find(name) else {
                out.push(Violation { subgraph: i, constraint: Constraint::Coverage, what: format!("{name} is not in the graph"), amount: 1.0 });
                continue;
            };
            for e in g.in_edges(v).iter().flatten() {
                let src = &g.vertex(g.edge(*e).src).id;
                if home.get(src.as_str()).is_some_and(|j| *j > i) {
                    out.push(Violation { subgraph: i, constraint: Constraint::Dependency, what: format!("{src}→{name}"), amount: 1.0 });
                }
            }
        }
        for (what, used, avail) in s.resources.components(&cap) {
            if used > avail {
                out.push(Violation { subgraph: i, constraint: Constraint::Resource, what: what.into(), amount: (used - avail) as f64 });
            }
        }
        let excess = s.bandwidth_gbps - device.bandwidth_gbps;
        if excess > 1e-9 * device.bandwidth_gbps.max(1.0) {
            out.push(Violation { subgraph: i, constraint: Constraint::Bandwidth, what: "bandwidth_gbps".into(), amount: excess });
        }
        for ev in &s.evictions {
            let spec = BufferSpec { d_b: ev.d_b, d_b_prime: ev.d_b_prime, t_db: ev.t_db };
            if !spec.eviction_legal() {
                out.push(Violation { subgraph: i, constraint: Constraint::Eviction, what: ev.label.clone(), amount: 1.0 });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Exploration

#[derive(Debug, Clone)]
struct Binding {
    resource: String,
    needed: u64,
    available: u64,
}

impl Binding {
    fn into_error(self) -> Error {
        Error::Infeasible { resource: self.resource, needed: self.needed, available: self.available }
    }
}

#[derive(Debug, Clone)]
enum CandKind {
    Evict { edge: EdgeId, spec: BufferSpec, r: f64 },
    Fragment { vertex: usize, step: u64, d: u64, r: f64, c: f64 },
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: CandKind,
    label: String,
    delta_d: f64,
    delta_bw: f64,
    score: f64,
}

/// Passes ③–④ result for one parallelism vector.
#[derive(Debug, Clone)]
struct Fit {
    perf: Vec<Perf>,
    d_b: Vec<u64>,
    candidates: Vec<Candidate>,
    /// Indices into `candidates`, in the order taken.
    taken: Vec<usize>,
    evicted: Vec<bool>,
    m_steps: Vec<u64>,
    logic: ResourceVector,
    overhead: ResourceVector,
    memory: ResourceVector,
    bandwidth: f64,
    boundary: f64,
    streams: u64,
    ports: u64,
    timing: SubgraphTiming,
}

impl Fit {
    fn total(&self) -> ResourceVector {
        self.logic + self.overhead + self.memory
    }
}

#[derive(Debug, Clone)]
struct Step {
    vertex: usize,
    p: u64,
    action: &'static str,
    ledger: Ledger,
}

#[derive(Debug, Clone)]
struct Outcome {
    p: Vec<u64>,
    fit: Fit,
    steps: Vec<Step>,
}

/// A contiguous slice `[start, end)` of the topological order.
struct Range {
    sub: ModelGraph,
    /// Global vertex of every local vertex.
    global: Vec<VertexId>,
    /// Local vertices in execution order.
    order: Vec<usize>,
}

pub struct Explorer<'a> {
    g: &'a ModelGraph,
    device: &'a DeviceSpec,
    costs: &'a CostTable,
    codec: &'a CodecModel,
    cfg: &'a DseConfig,
    order: Vec<VertexId>,
    position: Vec<usize>,
    bw_cap: f64,
}

fn ledger(device: &DeviceSpec, r: ResourceVector, bw_words: f64, l: u32) -> Ledger {
    Ledger { dsp: r.dsp, lut: r.lut, ff: r.ff, bram18k: r.bram18k, uram: r.uram, bandwidth_gbps: device.to_gbps(bw_words, l) }
}

impl<'a> Explorer<'a> {
    pub fn new(g: &'a ModelGraph, device: &'a DeviceSpec, costs: &'a CostTable, codec: &'a CodecModel, cfg: &'a DseConfig) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::Empty("graph has no vertices".into()));
        }
        if cfg.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if cfg.memory.dynamic_steps == 0 {
            return Err(Error::Config("dynamic_steps must be positive".into()));
        }
        let order = g.topological_order()?;
        let mut position = vec![0; g.len()];
        for (i, v) in order.iter().enumerate() {
            position[v.0] = i;
        }
        let bw_cap = device.bandwidth_words_per_cycle(g.word_length);
        Ok(Self { g, device, costs, codec, cfg, order, position, bw_cap })
    }

    fn range(&self, start: usize, end: usize) -> Range {
        let members: Vec<VertexId> = self.order[start..end].to_vec();
        let sub = self.g.induced(&members);
        let global: Vec<VertexId> = (0..sub.len()).map(|i| sub.origin(VertexId(i))).collect();
        let mut order: Vec<usize> = (0..sub.len()).collect();
        order.sort_by_key(|i| self.position[global[*i].0]);
        Range { sub, global, order }
    }

    fn global_edge(&self, r: &Range, e: EdgeId) -> EdgeId {
        let edge = r.sub.edge(e);
        self.g.in_edges(r.global[edge.dst.0])[edge.dst_slot].expect("induced edges exist in the model")
    }

    fn edge_label(&self, r: &Range, e: EdgeId) -> String {
        self.g.edge_label(self.global_edge(r, e))
    }

    fn candidates(&self, r: &Range, perf: &[Perf], d_b: &[u64]) -> Vec<Candidate> {
        let l = r.sub.word_length;
        let mut out = Vec::new();
        for e in r.sub.edge_ids() {
            let spec = BufferSpec::for_device(d_b[e.0], self.device);
            if !spec.eviction_legal() {
                continue;
            }
            let rate = edge_rate(&r.sub, perf, e);
            let label = self.edge_label(r, e);
            let Ok(res) = evict_activation(spec, rate, self.codec.activation, true, self.device, &label) else { continue };
            out.push(Candidate {
                kind: CandKind::Evict { edge: e, spec, r: rate },
                label,
                delta_d: res.delta_d as f64,
                delta_bw: res.delta_bw,
                score: eviction_benefit(l, res.delta_d as f64, res.delta_bw),
            });
        }
        let steps = self.cfg.memory.dynamic_steps;
        for (i, v) in r.sub.vertices().iter().enumerate() {
            let Ok(d) = weight_volume(v) else { continue };
            let rate = weight_rate(v, &perf[i]);
            let c = self.codec.weight_ratio(&v.id);
            let delta_d = d as f64 / steps as f64;
            let delta_bw = rate * c / steps as f64;
            let score = eviction_benefit(l, delta_d, delta_bw);
            for step in 1..=steps {
                out.push(Candidate { kind: CandKind::Fragment { vertex: i, step, d, r: rate, c }, label: v.id.clone(), delta_d, delta_bw, score });
            }
        }
        out.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)).then_with(|| step_of(a).cmp(&step_of(b)))
        });
        out
    }

    /// Passes ③ and ④ for a fixed parallelism vector.
    fn fit(&self, r: &Range, p: &[u64]) -> std::result::Result<Fit, Binding> {
        let sub = &r.sub;
        let l = sub.word_length;
        let perf: Vec<Perf> = graph_perf(sub, p).map_err(|e| Binding { resource: e.to_string(), needed: 0, available: 0 })?;
        let ii = initiation_interval(&perf).unwrap_or(1.0);
        let depth = graph_pipeline_depth(sub, &perf).unwrap_or(0.0);
        let logic: ResourceVector = sub.vertices().iter().zip(p).map(|(v, p)| vertex_resources(v, *p, l, self.costs)).sum();
        let d_b = buffer_depths(sub, &perf, &self.cfg.memory);
        let ext_words: u64 = sub.external_inputs().iter().map(|x| x.words).sum::<u64>() + sub.external_outputs().iter().map(|x| x.words).sum::<u64>();
        let boundary = ext_words as f64 / ii;
        let ext_streams = (sub.external_inputs().len() + sub.external_outputs().len()) as u64;
        let bw_limit = self.bw_cap * (1.0 + 1e-12);
        if boundary > bw_limit {
            return Err(Binding {
                resource: "bandwidth".into(),
                needed: self.device.to_gbps(boundary, l).ceil() as u64,
                available: self.device.bandwidth_gbps as u64,
            });
        }
        let candidates = self.candidates(r, &perf, &d_b);
        let cap = self.device.resources();

        let realize = |k: usize| -> std::result::Result<Fit, Binding> {
            let mut taken = Vec::new();
            let mut evicted = vec![false; sub.edges().len()];
            let mut m_steps = vec![0u64; sub.len()];
            let mut bandwidth = boundary;
            for (i, c) in candidates.iter().enumerate().take(k) {
                if bandwidth + c.delta_bw > bw_limit {
                    continue;
                }
                bandwidth += c.delta_bw;
                taken.push(i);
                match c.kind {
                    CandKind::Evict { edge, .. } => evicted[edge.0] = true,
                    CandKind::Fragment { vertex, .. } => m_steps[vertex] += 1,
                }
            }
            let n_evicted = evicted.iter().filter(|x| **x).count() as u64;
            let n_frag = m_steps.iter().filter(|x| **x > 0).count() as u64;
            let streams = ext_streams + n_evicted + n_frag;
            let ports = streams.min(self.device.max_dma_ports.max(1));
            // encoder + decoder per evicted edge, decoder per fragmented store
            let overhead = codec_overhead(self.codec.scheme, 2 * n_evicted + n_frag, self.costs)
                + ResourceVector { lut: self.costs.dma_port.lut * ports, ff: self.costs.dma_port.ff * ports, ..Default::default() };

            let mut stores: Vec<Store> = Vec::new();
            let steps = self.cfg.memory.dynamic_steps;
            for (i, v) in sub.vertices().iter().enumerate() {
                let m = m_steps[i] as f64 / steps as f64;
                stores.extend(weight_stores(v, p[i], m, l, self.device.dma_burst_words));
                stores.extend(line_buffer_store(v, &perf[i], l));
            }
            let residual = self.device.residual_fifo_depth();
            for e in sub.edge_ids() {
                let name = format!("{}", e.0);
                if evicted[e.0] {
                    for _ in 0..2 {
                        stores.push(Store { kind: StoreKind::Residual(name.clone()), width: l as u64, depth: residual / 2 });
                    }
                } else {
                    stores.push(Store { kind: StoreKind::Fifo(name), width: l as u64, depth: d_b[e.0] });
                }
            }
            let lut_budget = cap.lut.saturating_sub(logic.lut + overhead.lut);
            let mem = allocate_on_chip(&stores, self.device, lut_budget, &self.cfg.memory).map_err(|e| match e {
                Error::Infeasible { resource, needed, available } => Binding { resource, needed, available },
                other => Binding { resource: other.to_string(), needed: 0, available: 0 },
            })?;
            let fit = Fit {
                perf: perf.clone(),
                d_b: d_b.clone(),
                candidates: Vec::new(),
                taken,
                evicted,
                m_steps,
                logic,
                overhead,
                memory: mem.totals,
                bandwidth,
                boundary,
                streams,
                ports,
                timing: SubgraphTiming::new(ii, depth),
            };
            if let Some((what, needed, available)) = fit.total().first_violation(&cap) {
                return Err(Binding { resource: what.into(), needed, available });
            }
            Ok(fit)
        };

        let mut fit = match realize(0) {
            Ok(f) => f,
            Err(first) => {
                let n = candidates.len();
                if n == 0 {
                    return Err(first);
                }
                let mut hi_fit = realize(n)?;
                let (mut lo, mut hi) = (0, n);
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    match realize(mid) {
                        Ok(f) => {
                            hi = mid;
                            hi_fit = f;
                        }
                        Err(_) => lo = mid,
                    }
                }
                hi_fit
            }
        };
        fit.candidates = candidates;
        Ok(fit)
    }

    fn next_step(&self, r: &Range, v: usize, p: u64) -> Option<u64> {
        let vertex = r.sub.vertex(VertexId(v));
        let lambda = |p: u64| vertex_perf::<f64>(vertex, p).map(|x| x.lambda).unwrap_or(f64::INFINITY);
        let now = lambda(p);
        valid_parallelism(vertex).into_iter().filter(|q| *q > p).find(|q| lambda(*q) < now)
    }

    /// Pass ②: step the bottleneck's parallelism while the subgraph still
    /// fits, then spend what is left on pipeline depth.
    fn optimize(&self, r: &Range, start: &[u64]) -> std::result::Result<Outcome, Binding> {
        let n = r.sub.len();
        let l = r.sub.word_length;
        let mut p = start.to_vec();
        let mut fit = self.fit(r, &p)?;
        let mut steps = Vec::new();
        loop {
            let b = (0..n)
                .reduce(|a, b| if fit.perf[b].lambda > fit.perf[a].lambda { b } else { a })
                .unwrap_or(0);
            let Some(q) = self.next_step(r, b, p[b]) else { break };
            let mut trial = p.clone();
            trial[b] = q;
            match self.fit(r, &trial) {
                Ok(f) => {
                    p = trial;
                    fit = f;
                    steps.push(Step { vertex: b, p: q, action: "bottleneck", ledger: ledger(self.device, fit.total(), fit.bandwidth, l) });
                }
                Err(_) => break,
            }
        }
        let mut exhausted = vec![false; n];
        for _ in 0..self.cfg.depth_steps_per_vertex * n {
            let base = fit.timing.depth;
            let mut best: Option<(f64, usize, u64)> = None;
            for v in 0..n {
                if exhausted[v] {
                    continue;
                }
                let Some(q) = self.next_step(r, v, p[v]) else {
                    exhausted[v] = true;
                    continue;
                };
                let mut perf = fit.perf.clone();
                let Ok(pv) = vertex_perf::<f64>(r.sub.vertex(VertexId(v)), q) else { continue };
                perf[v] = pv;
                let Ok(d) = graph_pipeline_depth(&r.sub, &perf) else { continue };
                let gain = base - d;
                if gain > 1e-9 * base.max(1.0) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, v, q));
                }
            }
            let Some((_, v, q)) = best else { break };
            let mut trial = p.clone();
            trial[v] = q;
            match self.fit(r, &trial) {
                Ok(f) if f.timing.ii <= fit.timing.ii => {
                    p = trial;
                    fit = f;
                    steps.push(Step { vertex: v, p: q, action: "depth", ledger: ledger(self.device, fit.total(), fit.bandwidth, l) });
                }
                _ => exhausted[v] = true,
            }
        }
        Ok(Outcome { p, fit, steps })
    }

    fn initial_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::new();
        let mut start = 0;
        for (i, v) in self.order.iter().enumerate().skip(1) {
            let vertex = self.g.vertex(*v);
            let allowed = self.cfg.boundary_kinds.as_ref().is_none_or(|k| k.contains(&vertex.kind));
            if allowed && !vertex.synthetic {
                ranges.push((start, i));
                start = i;
            }
        }
        ranges.push((start, self.order.len()));
        ranges
    }

    fn evaluate(&self, range: (usize, usize)) -> std::result::Result<Outcome, Binding> {
        let r = self.range(range.0, range.1);
        self.optimize(&r, &vec![1; r.sub.len()])
    }

    fn build_subgraph(&self, index: usize, range: (usize, usize), o: &Outcome) -> SubgraphPlan {
        let r = self.range(range.0, range.1);
        let sub = &r.sub;
        let l = sub.word_length;
        let f = &o.fit;
        let steps = self.cfg.memory.dynamic_steps;
        let ext_in: BTreeSet<usize> = sub.external_inputs().iter().map(|x| x.vertex.0).collect();
        let ext_out: BTreeSet<usize> = sub.external_outputs().iter().map(|x| x.vertex.0).collect();
        let mut a_i = vec![false; sub.len()];
        let mut a_o = vec![false; sub.len()];
        for e in sub.edge_ids() {
            if f.evicted[e.0] {
                a_o[sub.edge(e).src.0] = true;
                a_i[sub.edge(e).dst.0] = true;
            }
        }
        let design = r
            .order
            .iter()
            .map(|i| DesignVector {
                vertex: sub.vertex(VertexId(*i)).id.clone(),
                s_i: ext_in.contains(i),
                s_o: ext_out.contains(i),
                p: o.p[*i],
                a_i: a_i[*i],
                a_o: a_o[*i],
                m_frag: f.m_steps[*i] as f64 / steps as f64,
            })
            .collect();
        let buffers = sub
            .edge_ids()
            .map(|e| {
                let edge = sub.edge(e);
                BufferDecision {
                    src: sub.vertex(edge.src).id.clone(),
                    dst: sub.vertex(edge.dst).id.clone(),
                    slot: edge.dst_slot,
                    label: self.edge_label(&r, e),
                    words: edge.words,
                    d_b: f.d_b[e.0],
                    evicted: f.evicted[e.0],
                }
            })
            .collect();
        let mut evictions = Vec::new();
        let mut fragments: Vec<FragmentDecision> = Vec::new();
        for i in &f.taken {
            let c = &f.candidates[*i];
            match c.kind {
                CandKind::Evict { edge, spec, r: rate } => {
                    let e = sub.edge(edge);
                    evictions.push(EvictionDecision {
                        label: c.label.clone(),
                        src: sub.vertex(e.src).id.clone(),
                        dst: sub.vertex(e.dst).id.clone(),
                        slot: e.dst_slot,
                        d_b: spec.d_b,
                        d_b_prime: spec.d_b_prime,
                        t_db: spec.t_db,
                        r: rate,
                        c_bar: self.codec.activation,
                        alpha: 1.0,
                        delta_d: c.delta_d as u64,
                        delta_bw: c.delta_bw,
                        score: c.score,
                    });
                }
                CandKind::Fragment { vertex, d, r: rate, c: ratio, .. } => {
                    let m = f.m_steps[vertex] as f64 / steps as f64;
                    if !fragments.iter().any(|x| x.vertex == c.label) {
                        fragments.push(FragmentDecision {
                            vertex: c.label.clone(),
                            m,
                            d,
                            r: rate,
                            c: ratio,
                            delta_d: m * d as f64,
                            delta_bw: m * rate * ratio,
                            score: c.score,
                        });
                    }
                }
            }
        }
        let resources = f.total();
        SubgraphPlan {
            index,
            vertices: r.order.iter().map(|i| sub.vertex(VertexId(*i)).id.clone()).collect(),
            design,
            buffers,
            evictions,
            fragments,
            timing: f.timing,
            logic: f.logic,
            overhead: f.overhead,
            memory: f.memory,
            resources,
            bandwidth_words: f.bandwidth,
            bandwidth_gbps: self.device.to_gbps(f.bandwidth, l),
            boundary_words: f.boundary,
            dma_streams: f.streams,
            dma_ports: f.ports,
        }
    }

    fn audit_for(&self, index: usize, range: (usize, usize), o: &Outcome, out: &mut Vec<AuditRecord>) {
        let r = self.range(range.0, range.1);
        let l = r.sub.word_length;
        for s in &o.steps {
            out.push(AuditRecord {
                pass: 2,
                subgraph: index,
                target: r.sub.vertex(VertexId(s.vertex)).id.clone(),
                action: format!("{} p={}", s.action, s.p),
                score: None,
                ledger_after: s.ledger,
            });
        }
        out.push(AuditRecord {
            pass: 3,
            subgraph: index,
            target: "memory".into(),
            action: format!("pack bram18k={} uram={} lutram_luts={}", o.fit.memory.bram18k, o.fit.memory.uram, o.fit.memory.lut),
            score: None,
            ledger_after: ledger(self.device, o.fit.total(), o.fit.boundary, l),
        });
        let mut bw = o.fit.boundary;
        for i in &o.fit.taken {
            let c = &o.fit.candidates[*i];
            bw += c.delta_bw;
            let action = match c.kind {
                CandKind::Evict { .. } => "evict".to_string(),
                CandKind::Fragment { step, .. } => format!("fragment m={step}/{}", self.cfg.memory.dynamic_steps),
            };
            out.push(AuditRecord {
                pass: 4,
                subgraph: index,
                target: c.label.clone(),
                action,
                score: Some(c.score),
                ledger_after: ledger(self.device, o.fit.total(), bw, l),
            });
        }
    }

    fn assemble(&self, ranges: &[(usize, usize)], outcomes: &[Arc<Outcome>], mut audit: Vec<AuditRecord>) -> Result<DesignPlan> {
        let subgraphs: Vec<SubgraphPlan> =
            ranges.iter().zip(outcomes).enumerate().map(|(i, (r, o))| self.build_subgraph(i, *r, o)).collect();
        for (i, (r, o)) in ranges.iter().zip(outcomes).enumerate() {
            self.audit_for(i, *r, o, &mut audit);
        }
        let timings: Vec<SubgraphTiming> = subgraphs.iter().map(|s| s.timing).collect();
        let perf = performance(&timings, self.cfg.batch, self.device.freq_hz(), self.device.reconfig_time_s)?;
        Ok(DesignPlan {
            model: self.g.name.clone(),
            device: self.device.name.clone(),
            batch: self.cfg.batch,
            codec: self.codec.scheme,
            word_length: self.g.word_length,
            freq_hz: self.device.freq_hz(),
            reconfig_time_s: self.device.reconfig_time_s,
            subgraphs,
            performance: perf,
            audit,
        })
    }

    fn initial(&self) -> Result<(Vec<(usize, usize)>, Vec<Arc<Outcome>>, Vec<AuditRecord>)> {
        let ranges = self.initial_ranges();
        let outcomes: Vec<std::result::Result<Outcome, Binding>> = ranges
            .par_iter()
            .map(|r| {
                let range = self.range(r.0, r.1);
                self.fit(&range, &vec![1; range.sub.len()]).map(|fit| Outcome { p: vec![1; range.sub.len()], fit, steps: Vec::new() })
            })
            .collect();
        let mut audit = Vec::new();
        let mut out = Vec::new();
        for (i, (r, o)) in ranges.iter().zip(outcomes).enumerate() {
            let o = o.map_err(Binding::into_error)?;
            audit.push(AuditRecord {
                pass: 1,
                subgraph: i,
                target: self.g.vertex(self.order[r.0]).id.clone(),
                action: format!("init {} vertices", r.1 - r.0),
                score: None,
                ledger_after: ledger(self.device, o.fit.total(), o.fit.bandwidth, self.g.word_length),
            });
            out.push(Arc::new(o));
        }
        Ok((ranges, out, audit))
    }

    /// Pass ①: the finest legal partitioning at minimal parallelism.
    pub fn initialize_min(&self) -> Result<DesignPlan> {
        let (ranges, outcomes, audit) = self.initial()?;
        self.assemble(&ranges, &outcomes, audit)
    }

    fn range_of(&self, sub: &SubgraphPlan) -> Result<(usize, usize)> {
        let pos: Vec<usize> = sub
            .vertices
            .iter()
            .map(|id| self.g.find(id).map(|v| self.position[v.0]).ok_or_else(|| Error::UnknownVertex(id.clone())))
            .collect::<Result<_>>()?;
        let (lo, hi) = (pos.iter().copied().min().unwrap_or(0), pos.iter().copied().max().unwrap_or(0) + 1);
        if hi - lo != pos.len() {
            return Err(Error::Config(format!("subgraph {} is not a contiguous range of the schedule", sub.index)));
        }
        Ok((lo, hi))
    }

    fn start_p(&self, r: &Range, sub: &SubgraphPlan) -> Vec<u64> {
        (0..r.sub.len()).map(|i| sub.p_of(&r.sub.vertex(VertexId(i)).id).unwrap_or(1)).collect()
    }

    /// Pass ② (with ③–④ re-run at every step) on one subgraph.
    pub fn alloc_parallelism(&self, sub: &SubgraphPlan) -> Result<SubgraphPlan> {
        let range = self.range_of(sub)?;
        let r = self.range(range.0, range.1);
        let o = self.optimize(&r, &self.start_p(&r, sub)).map_err(Binding::into_error)?;
        Ok(self.build_subgraph(sub.index, range, &o))
    }

    /// Passes ③–④ on one subgraph at its current parallelism.
    pub fn alloc_off_chip(&self, sub: &SubgraphPlan) -> Result<SubgraphPlan> {
        let range = self.range_of(sub)?;
        let r = self.range(range.0, range.1);
        let p = self.start_p(&r, sub);
        let fit = self.fit(&r, &p).map_err(Binding::into_error)?;
        Ok(self.build_subgraph(sub.index, range, &Outcome { p, fit, steps: Vec::new() }))
    }

    /// Keep the partitioning and parallelism of `plan` but redo passes ③–④
    /// against this explorer's graph, e.g. a resized copy of the model.
    pub fn refit(&self, plan: &DesignPlan) -> Result<DesignPlan> {
        let mut ranges = Vec::new();
        let mut outcomes = Vec::new();
        for s in &plan.subgraphs {
            let range = self.range_of(s)?;
            let r = self.range(range.0, range.1);
            let p = self.start_p(&r, s);
            let fit = self.fit(&r, &p).map_err(Binding::into_error)?;
            ranges.push(range);
            outcomes.push(Arc::new(Outcome { p, fit, steps: Vec::new() }));
        }
        self.assemble(&ranges, &outcomes, Vec::new())
    }

    fn theta(&self, timings: &[SubgraphTiming]) -> Option<(f64, f64)> {
        performance(timings, self.cfg.batch, self.device.freq_hz(), self.device.reconfig_time_s).ok().map(|p| (p.theta, p.t))
    }

    /// Pass ⑤: merge adjacent subgraphs while throughput improves.
    fn merge(
        &self,
        mut ranges: Vec<(usize, usize)>,
        mut outcomes: Vec<Arc<Outcome>>,
        audit: &mut Vec<AuditRecord>,
    ) -> (Vec<(usize, usize)>, Vec<Arc<Outcome>>) {
        let mut memo: HashMap<(usize, usize), Option<Arc<Outcome>>> = HashMap::new();
        for _ in 0..self.cfg.max_merge_rounds {
            if ranges.len() < 2 {
                break;
            }
            let pairs: Vec<(usize, usize)> = (0..ranges.len() - 1).map(|i| (ranges[i].0, ranges[i + 1].1)).collect();
            let fresh: Vec<(usize, usize)> = pairs.iter().copied().filter(|r| !memo.contains_key(r)).collect();
            let computed: Vec<Option<Arc<Outcome>>> = fresh.par_iter().map(|r| self.evaluate(*r).ok().map(Arc::new)).collect();
            for (r, o) in fresh.into_iter().zip(computed) {
                memo.insert(r, o);
            }
            let base_timings: Vec<SubgraphTiming> = outcomes.iter().map(|o| o.fit.timing).collect();
            let Some(mut best_val) = self.theta(&base_timings) else { break };
            let mut best: Option<usize> = None;
            for (i, r) in pairs.iter().enumerate() {
                let Some(Some(o)) = memo.get(r) else { continue };
                let mut t = base_timings.clone();
                t.splice(i..i + 2, [o.fit.timing]);
                let Some(val) = self.theta(&t) else { continue };
                let better = val.0 > best_val.0 * (1.0 + 1e-12) || (val.0 >= best_val.0 && val.1 < best_val.1 * (1.0 - 1e-12));
                if better {
                    best_val = val;
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            let merged = pairs[i];
            let o = memo.get(&merged).cloned().flatten().expect("best merge was evaluated");
            ranges.splice(i..i + 2, [merged]);
            outcomes.splice(i..i + 2, [o.clone()]);
            audit.push(AuditRecord {
                pass: 5,
                subgraph: i,
                target: format!(
                    "{}..{}",
                    self.g.vertex(self.order[merged.0]).id,
                    self.g.vertex(self.order[merged.1 - 1]).id
                ),
                action: format!("merge -> {} subgraphs", ranges.len()),
                score: Some(best_val.0),
                ledger_after: ledger(self.device, o.fit.total(), o.fit.bandwidth, self.g.word_length),
            });
        }
        (ranges, outcomes)
    }

    /// Pass ⑤ applied to an existing plan.
    pub fn merge_subgraphs(&self, plan: &DesignPlan) -> Result<DesignPlan> {
        let mut ranges = Vec::new();
        let mut outcomes = Vec::new();
        for s in &plan.subgraphs {
            let range = self.range_of(s)?;
            let r = self.range(range.0, range.1);
            let o = self.optimize(&r, &self.start_p(&r, s)).map_err(Binding::into_error)?;
            ranges.push(range);
            outcomes.push(Arc::new(o));
        }
        let mut audit = Vec::new();
        let (ranges, outcomes) = self.merge(ranges, outcomes, &mut audit);
        self.assemble(&ranges, &outcomes, audit)
    }

    /// Full exploration: passes ① to ⑤.
    pub fn run(&self) -> Result<DesignPlan> {
        let (ranges, _, mut audit) = self.initial()?;
        let optimized: Vec<std::result::Result<Outcome, Binding>> = ranges.par_iter().map(|r| self.evaluate(*r)).collect();
        let outcomes = optimized.into_iter().map(|o| o.map(Arc::new).map_err(Binding::into_error)).collect::<Result<Vec<_>>>()?;
        let (ranges, outcomes) = self.merge(ranges, outcomes, &mut audit);
        self.assemble(&ranges, &outcomes, audit)
    }
}

fn step_of(c: &Candidate) -> u64 {
    match c.kind {
        CandKind::Evict { .. } => 0,
        CandKind::Fragment { step, .. } => step,
    }
}

/// Explore with the bundled cost table and uncompressed off-chip traffic.
pub fn run_dse(g: &ModelGraph, device: &DeviceSpec, b: u64) -> Result<DesignPlan> {
    let cfg = DseConfig { batch: b, ..Default::default() };
    let costs = CostTable::default();
    let codec = CodecModel::raw();
    Explorer::new(g, device, &costs, &codec, &cfg)?.run()
}

/// Graph and simulator configuration reproducing one planned subgraph.
/// Evicted edges share the device bandwidth in proportion to their demand.
pub fn subgraph_sim(g: &ModelGraph, plan: &DesignPlan, index: usize, device: &DeviceSpec, frames: u64) -> Result<(ModelGraph, SimConfig<f64>)> {
    let s = plan
        .subgraphs
        .get(index)
        .ok_or_else(|| Error::Config(format!("plan has no subgraph {index}")))?;
    let members = s
        .vertices
        .iter()
        .map(|id| g.find(id).ok_or_else(|| Error::UnknownVertex(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let sub = g.induced(&members);
    let p: Vec<u64> = sub.vertices().iter().map(|v| s.p_of(&v.id).unwrap_or(1)).collect();
    let perf = graph_perf::<f64>(&sub, &p)?;
    let mut cfg = SimConfig::new(&sub, perf, frames);
    let bw_cap = device.bandwidth_words_per_cycle(plan.word_length);
    let scale = if s.bandwidth_words > 0.0 { bw_cap / s.bandwidth_words } else { 1.0 };
    for e in sub.edge_ids() {
        let edge = sub.edge(e);
        let (src, dst) = (&sub.vertex(edge.src).id, &sub.vertex(edge.dst).id);
        let Some(b) = s.buffers.iter().find(|b| &b.src == src && &b.dst == dst && b.slot == edge.dst_slot) else { continue };
        cfg.fifo_depth[e.0] = b.d_b.max(1);
        if let Some(ev) = s.evictions.iter().find(|x| &x.src == src && &x.dst == dst && x.slot == edge.dst_slot) {
            cfg.fifo_depth[e.0] = ev.d_b_prime;
            cfg.evicted.push(DmaEdge {
                edge: e,
                ratio_trace: vec![ev.c_bar],
                alpha: ev.alpha,
                share: ev.delta_bw * scale.max(1.0),
                residual_depth: ev.d_b_prime,
                latency: ev.t_db as f64,
            });
        }
    }
    Ok((sub, cfg))
}
