//! Word-level discrete-event simulation of a streaming pipeline.
//!
//! Every vertex consumes input words into a sliding window and emits output
//! words one at a time. Output word `j` needs the first
//! [`VertexPerf::words_needed`] inputs of its frame. A vertex may read up to
//! `ρ` words ahead of that need (its line buffer). Emission of `j` happens
//! `T` after both the previous emission and the arrival of its last needed
//! input, where `T = W/σ_out` in the first frame and `λ/σ_out` afterwards.
//! `W` is the largest `λ+ρ` among the vertex and everything upstream of it. Edges are bounded FIFOs; a producer whose output FIFO is full
//! blocks and accrues stall time.
//!
//! Evicted edges replace the FIFO with a DMA path: written words are served
//! at the edge's share of off-chip bandwidth, arrive `t_db` cycles later, and
//! the producer blocks while more than half of the residual FIFO depth is
//! waiting to be written.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, ModelGraph, VertexId, VertexKind};
use crate::layer_models::{macs, VertexPerf};
use crate::scalar::{Ordered, Scalar};

pub const DEFAULT_FIFO_DEPTH: u64 = 64;

/// Off-chip path replacing one edge's on-chip buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaEdge<T> {
    pub edge: EdgeId,
    /// Actual compression ratio of each frame (cycled if shorter than the run).
    pub ratio_trace: Vec<T>,
    /// Read-penalty factor; traffic per word is `c·(1+α)`.
    pub alpha: T,
    /// Off-chip bandwidth granted to this edge (words/cycle).
    pub share: T,
    /// Total residual FIFO depth `d_b'`.
    pub residual_depth: u64,
    /// DMA round trip `t_db` (cycles).
    pub latency: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub perf: Vec<VertexPerf<T>>,
    /// Depth of every edge FIFO, indexed by edge.
    pub fifo_depth: Vec<u64>,
    pub frames: u64,
    pub evicted: Vec<DmaEdge<T>>,
    pub waveform: bool,
}

impl<T: Scalar> SimConfig<T> {
    /// Default-depth FIFOs everywhere, no eviction.
    pub fn new(g: &ModelGraph, perf: Vec<VertexPerf<T>>, frames: u64) -> Self {
        Self {
            perf,
            fifo_depth: vec![DEFAULT_FIFO_DEPTH; g.edges().len()],
            frames,
            evicted: Vec::new(),
            waveform: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveKind {
    Fill,
    FirstOutput,
    FrameDone,
    Blocked,
    Unblocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveEvent<T> {
    pub cycle: T,
    pub vertex: String,
    pub event: WaveKind,
}

/// Off-chip traffic of one evicted edge during one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaFrame<T> {
    pub edge: EdgeId,
    pub frame: u64,
    pub first_push: T,
    pub last_service: T,
    /// Off-chip words moved (write and read, after compression).
    pub traffic: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport<T> {
    /// Time the first output of each vertex became computable (its last
    /// needed input word was consumed). This is the measured pipeline depth.
    pub fill: Vec<Option<T>>,
    pub first_output: Vec<Option<T>>,
    /// Emission time of the last word of every frame, per vertex.
    pub frame_end: Vec<Vec<T>>,
    pub total_cycles: T,
    /// Steady-state frame interval at the graph outputs: mean spacing over
    /// the later half of the frames (needs two frames).
    pub interval: Option<T>,
    /// Peak on-chip occupancy of every edge.
    pub max_occupancy: Vec<u64>,
    pub stall: Vec<T>,
    pub consumed: Vec<u64>,
    pub produced: Vec<u64>,
    pub dma: Vec<DmaFrame<T>>,
    pub waveform: Vec<WaveEvent<T>>,
}

impl<T: Scalar> SimReport<T> {
    pub fn total_stall(&self) -> T {
        self.stall.iter().fold(T::zero(), |a, b| a + *b)
    }
}

/// Measured pipeline depth of `v`: first-output readiness relative to the
/// start of the input stream at cycle 0.
pub fn measure_pipeline_depth<T: Scalar>(g: &ModelGraph, report: &SimReport<T>, v: VertexId) -> Result<T> {
    report
        .fill
        .get(v.0)
        .ok_or_else(|| Error::UnknownVertex(v.to_string()))?
        .ok_or_else(|| Error::NoOutput(g.vertex(v).id.clone()))
}

/// Largest measured pipeline depth over all vertices.
pub fn measured_graph_depth<T: Scalar>(report: &SimReport<T>) -> Option<T> {
    report.fill.iter().flatten().copied().reduce(T::max_of)
}

// ---------------------------------------------------------------------------

/// Order in which a vertex reads its slots: `counts[s]` consecutive words of
/// slot `s`, repeated.
#[derive(Debug, Clone)]
struct SlotPattern {
    cum: Vec<u64>,
}

impl SlotPattern {
    fn new(counts: Vec<u64>) -> Self {
        let mut cum = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in counts {
            acc += c;
            cum.push(acc);
        }
        Self { cum }
    }

    fn slot(&self, k: u64) -> usize {
        let period = *self.cum.last().unwrap_or(&1);
        let r = k % period;
        self.cum.iter().position(|c| r < *c).unwrap_or(0)
    }
}

fn pattern(g: &ModelGraph, v: VertexId) -> SlotPattern {
    let vx = g.vertex(v);
    match vx.kind {
        VertexKind::Concat => SlotPattern::new(vx.input_shapes.iter().map(|s| s.channels).collect()),
        VertexKind::Add => SlotPattern::new(vec![1; vx.input_shapes.len()]),
        _ => SlotPattern::new(vec![1]),
    }
}

enum Input<T> {
    Fifo(EdgeId),
    /// Externally fed slot: word `i` (global) arrives at `(i+1)/rate`.
    Source { rate: T, next: u64 },
}

struct VState<T> {
    /// Global index of the next input word (over all slots and frames).
    k: u64,
    /// Global index of the next output word.
    j: u64,
    ready: T,
    /// Consumption times of inputs from `base` on.
    consumed_at: VecDeque<T>,
    base: u64,
    emit_at: Option<T>,
    blocked: bool,
    wake_at: Option<T>,
    lookahead: u64,
    t0: T,
    t1: T,
}

struct Dma<T> {
    cfg: DmaEdge<T>,
    /// Service completion times of words not yet written off-chip.
    backlog: VecDeque<T>,
    last_service: T,
    cost: Vec<T>,
    frame_words: u64,
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Emit,
    Wake,
}

type Event<T> = Reverse<(Ordered<T>, usize, Kind, u64)>;

struct Sim<'a, T: Scalar> {
    g: &'a ModelGraph,
    cfg: &'a SimConfig<T>,
    patterns: Vec<SlotPattern>,
    inputs: Vec<Vec<Input<T>>>,
    state: Vec<VState<T>>,
    fifo: Vec<VecDeque<T>>,
    dma: Vec<Option<Dma<T>>>,
    heap: BinaryHeap<Event<T>>,
    seq: u64,
    now: T,
    report: SimReport<T>,
    dma_frames: Vec<Vec<DmaFrame<T>>>,
}

fn validate<T: Scalar>(g: &ModelGraph, cfg: &SimConfig<T>) -> Result<()> {
    if cfg.perf.len() != g.len() {
        return Err(Error::Config(format!("{} perf records for {} vertices", cfg.perf.len(), g.len())));
    }
    if cfg.fifo_depth.len() != g.edges().len() {
        return Err(Error::Config(format!("{} FIFO depths for {} edges", cfg.fifo_depth.len(), g.edges().len())));
    }
    if cfg.fifo_depth.iter().any(|d| *d == 0) {
        return Err(Error::Config("FIFO depths must be at least 1".into()));
    }
    if cfg.frames == 0 {
        return Err(Error::Config("at least one frame must be simulated".into()));
    }
    for (v, p) in cfg.perf.iter().enumerate() {
        let vx = &g.vertices()[v];
        if p.sigma_in != vx.input_words() || p.sigma_out != vx.output_words() {
            return Err(Error::Config(format!("perf of `{}` does not match its shapes", vx.id)));
        }
    }
    let mut seen = vec![false; g.edges().len()];
    for d in &cfg.evicted {
        if d.edge.0 >= seen.len() || std::mem::replace(&mut seen[d.edge.0], true) {
            return Err(Error::Config(format!("evicted edge {:?} is unknown or repeated", d.edge)));
        }
        if d.ratio_trace.is_empty() || !(d.share > T::zero()) || d.residual_depth < 2 {
            return Err(Error::Config(format!("evicted edge {} needs a ratio trace, positive share and d_b' >= 2", g.edge_label(d.edge))));
        }
    }
    Ok(())
}

impl<'a, T: Scalar> Sim<'a, T> {
    fn new(g: &'a ModelGraph, cfg: &'a SimConfig<T>) -> Self {
        let n = g.len();
        let mut inputs = Vec::with_capacity(n);
        let mut state = Vec::with_capacity(n);
        // first-frame pace is capped by the slowest window upstream
        let mut window = vec![T::zero(); n];
        for v in g.topological_order().expect("graphs are acyclic by construction") {
            window[v.0] = g
                .in_edges(v)
                .iter()
                .flatten()
                .fold(cfg.perf[v.0].window(), |w, e| w.max_of(window[g.edge(*e).src.0]));
        }
        for v in g.vertex_ids() {
            let perf = &cfg.perf[v.0];
            let vx = g.vertex(v);
            let slots = g
                .in_edges(v)
                .iter()
                .enumerate()
                .map(|(s, e)| match e {
                    Some(e) => Input::Fifo(*e),
                    None => Input::Source {
                        rate: T::from_u64(vx.input_shapes[s].volume()) / perf.lambda,
                        next: 0,
                    },
                })
                .collect();
            inputs.push(slots);
            let sigma_out = T::from_u64(perf.sigma_out);
            state.push(VState {
                k: 0,
                j: 0,
                ready: T::zero(),
                consumed_at: VecDeque::new(),
                base: 0,
                emit_at: None,
                blocked: false,
                wake_at: None,
                lookahead: perf.rho.ceil_u64().max(1),
                t0: window[v.0] / sigma_out,
                t1: perf.lambda / sigma_out,
            });
        }
        let mut dma: Vec<Option<Dma<T>>> = (0..g.edges().len()).map(|_| None).collect();
        for d in &cfg.evicted {
            let cost = d.ratio_trace.iter().map(|c| *c * (T::one() + d.alpha) / d.share).collect();
            dma[d.edge.0] = Some(Dma {
                cfg: d.clone(),
                backlog: VecDeque::new(),
                last_service: T::zero(),
                cost,
                frame_words: g.edge(d.edge).words,
            });
        }
        let report = SimReport {
            fill: vec![None; n],
            first_output: vec![None; n],
            frame_end: vec![Vec::new(); n],
            total_cycles: T::zero(),
            interval: None,
            max_occupancy: vec![0; g.edges().len()],
            stall: vec![T::zero(); n],
            consumed: vec![0; n],
            produced: vec![0; n],
            dma: Vec::new(),
            waveform: Vec::new(),
        };
        Sim {
            g,
            cfg,
            patterns: g.vertex_ids().map(|v| pattern(g, v)).collect(),
            inputs,
            state,
            fifo: vec![VecDeque::new(); g.edges().len()],
            dma,
            heap: BinaryHeap::new(),
            seq: 0,
            now: T::zero(),
            report,
            dma_frames: vec![Vec::new(); g.edges().len()],
        }
    }

    fn push(&mut self, t: T, v: usize, kind: Kind) {
        self.seq += 1;
        self.heap.push(Reverse((Ordered(t), v, kind, self.seq)));
    }

    fn wake(&mut self, v: usize, t: T) {
        let st = &mut self.state[v];
        if let Some(w) = st.wake_at {
            if w <= t {
                return;
            }
        }
        st.wake_at = Some(t);
        self.push(t, v, Kind::Wake);
    }

    fn wave(&mut self, v: usize, event: WaveKind) {
        if self.cfg.waveform {
            self.report.waveform.push(WaveEvent { cycle: self.now, vertex: self.g.vertices()[v].id.clone(), event });
        }
    }

    fn need_global(&self, v: usize, j: u64) -> u64 {
        let p = &self.cfg.perf[v];
        (j / p.sigma_out) * p.sigma_in + p.words_needed(j % p.sigma_out)
    }

    fn total_in(&self, v: usize) -> u64 {
        self.cfg.perf[v].sigma_in * self.cfg.frames
    }

    fn total_out(&self, v: usize) -> u64 {
        self.cfg.perf[v].sigma_out * self.cfg.frames
    }

    /// Consume whatever is available and allowed, then schedule the next emission.
    fn on_wake(&mut self, v: usize) {
        let t = self.now;
        if self.state[v].wake_at.is_some_and(|w| w <= t) {
            self.state[v].wake_at = None;
        }
        let total_in = self.total_in(v);
        loop {
            let st = &self.state[v];
            if st.k >= total_in || st.j >= self.total_out(v) {
                break;
            }
            let limit = self.need_global(v, st.j) + st.lookahead;
            if st.k >= limit {
                break;
            }
            let k = st.k;
            let sigma_in = self.cfg.perf[v].sigma_in;
            let slot = self.patterns[v].slot(k % sigma_in);
            let avail = match &self.inputs[v][slot] {
                Input::Source { rate, next } => T::from_u64(*next + 1) / *rate,
                Input::Fifo(e) => match self.fifo[e.0].front() {
                    Some(a) => *a,
                    None => break,
                },
            };
            if avail > t {
                self.wake(v, avail);
                break;
            }
            match &mut self.inputs[v][slot] {
                Input::Source { next, .. } => *next += 1,
                Input::Fifo(e) => {
                    let e = *e;
                    self.fifo[e.0].pop_front();
                    let producer = self.g.edge(e).src.0;
                    if self.state[producer].blocked {
                        self.push(t, producer, Kind::Emit);
                    }
                }
            }
            let st = &mut self.state[v];
            st.consumed_at.push_back(t);
            st.k += 1;
            self.report.consumed[v] += 1;
            if st.j == 0 && st.k == self.cfg.perf[v].words_needed(0) {
                self.report.fill[v] = Some(t);
                self.wave(v, WaveKind::Fill);
            }
        }
        self.schedule_emit(v);
    }

    fn schedule_emit(&mut self, v: usize) {
        let st = &self.state[v];
        if st.emit_at.is_some() || st.j >= self.total_out(v) {
            return;
        }
        let need = self.need_global(v, st.j);
        if st.k < need {
            return;
        }
        let last_input = st.consumed_at[(need - 1 - st.base) as usize];
        let step = if st.j < self.cfg.perf[v].sigma_out { st.t0 } else { st.t1 };
        let at = st.ready.max_of(last_input) + step;
        let st = &mut self.state[v];
        st.emit_at = Some(at);
        self.push(at, v, Kind::Emit);
    }

    fn has_space(&mut self, e: EdgeId) -> Option<T> {
        let t = self.now;
        match &mut self.dma[e.0] {
            Some(d) => {
                while d.backlog.front().is_some_and(|s| *s <= t) {
                    d.backlog.pop_front();
                }
                if (d.backlog.len() as u64) < d.cfg.residual_depth / 2 {
                    None
                } else {
                    Some(*d.backlog.front().expect("non-empty backlog"))
                }
            }
            None => {
                if (self.fifo[e.0].len() as u64) < self.cfg.fifo_depth[e.0] {
                    None
                } else {
                    // woken by the consumer when it pops
                    Some(T::zero())
                }
            }
        }
    }

    fn on_emit(&mut self, v: usize) {
        let t = self.now;
        let Some(at) = self.state[v].emit_at else { return };
        if at > t {
            return;
        }
        let outs: Vec<EdgeId> = self.g.out_edges(VertexId(v)).to_vec();
        let mut retry: Option<T> = None;
        let mut full = false;
        for e in &outs {
            if let Some(w) = self.has_space(*e) {
                full = true;
                if w > t {
                    retry = Some(retry.map_or(w, |r: T| r.min_of(w)));
                }
            }
        }
        if full {
            if !self.state[v].blocked {
                self.state[v].blocked = true;
                self.wave(v, WaveKind::Blocked);
            }
            if let Some(w) = retry {
                self.push(w, v, Kind::Emit);
            }
            return;
        }
        if self.state[v].blocked {
            self.state[v].blocked = false;
            self.wave(v, WaveKind::Unblocked);
        }
        self.report.stall[v] += t - at;
        let j = self.state[v].j;
        let sigma_out = self.cfg.perf[v].sigma_out;
        let frame = j / sigma_out;
        for e in outs {
            let arrive = match &mut self.dma[e.0] {
                Some(d) => {
                    let idx = (frame as usize) % d.cost.len();
                    let s = t.max_of(d.last_service) + d.cost[idx];
                    d.last_service = s;
                    d.backlog.push_back(s);
                    let occ = d.backlog.len() as u64;
                    let word = j % sigma_out;
                    let frames = &mut self.dma_frames[e.0];
                    if word == 0 || frames.is_empty() {
                        frames.push(DmaFrame { edge: e, frame, first_push: t, last_service: s, traffic: T::zero() });
                    }
                    let rec = frames.last_mut().expect("frame record");
                    rec.last_service = s;
                    rec.traffic += d.cfg.ratio_trace[idx] * (T::one() + d.cfg.alpha);
                    debug_assert!(word < d.frame_words);
                    if occ > self.report.max_occupancy[e.0] {
                        self.report.max_occupancy[e.0] = occ;
                    }
                    s + d.cfg.latency
                }
                None => t,
            };
            self.fifo[e.0].push_back(arrive);
            let occ = self.fifo[e.0].len() as u64;
            if self.dma[e.0].is_none() && occ > self.report.max_occupancy[e.0] {
                self.report.max_occupancy[e.0] = occ;
            }
            let consumer = self.g.edge(e).dst.0;
            self.wake(consumer, arrive);
        }
        self.report.produced[v] += 1;
        if self.report.first_output[v].is_none() {
            self.report.first_output[v] = Some(t);
            self.wave(v, WaveKind::FirstOutput);
        }
        let st = &mut self.state[v];
        st.j += 1;
        st.ready = t;
        st.emit_at = None;
        if st.j % sigma_out == 0 {
            self.report.frame_end[v].push(t);
            self.wave(v, WaveKind::FrameDone);
        }
        // forget consumption times no later emission can refer to
        if self.state[v].j < self.total_out(v) {
            let need = self.need_global(v, self.state[v].j);
            let st = &mut self.state[v];
            while st.base + 1 < need && !st.consumed_at.is_empty() {
                st.consumed_at.pop_front();
                st.base += 1;
            }
        }
        self.on_wake(v);
    }

    fn run(mut self) -> Result<SimReport<T>> {
        for v in 0..self.g.len() {
            self.push(T::zero(), v, Kind::Wake);
        }
        while let Some(Reverse((Ordered(t), v, kind, _))) = self.heap.pop() {
            self.now = t;
            match kind {
                Kind::Wake => self.on_wake(v),
                Kind::Emit => self.on_emit(v),
            }
        }
        let unfinished: Vec<String> = (0..self.g.len())
            .filter(|v| self.state[*v].j < self.total_out(*v))
            .map(|v| self.g.vertices()[v].id.clone())
            .collect();
        if !unfinished.is_empty() {
            return Err(Error::Deadlock { cycle: self.now.to_f64(), blocked: unfinished });
        }
        let mut r = self.report;
        r.total_cycles = self.now;
        r.interval = self
            .g
            .external_outputs()
            .iter()
            .filter_map(|o| {
                let ends = &r.frame_end[o.vertex.0];
                let n = ends.len();
                let h = n.saturating_sub(1) / 2;
                (n >= 2).then(|| (ends[n - 1] - ends[h]) / T::from_u64((n - 1 - h) as u64))
            })
            .reduce(T::max_of);
        r.dma = self.dma_frames.into_iter().flatten().collect();
        Ok(r)
    }
}

/// Cycles by which `report` completes frames later than `baseline` at the
/// graph outputs, summed over outputs and frames. Producer back-pressure that
/// never reaches an output does not count.
pub fn output_delay<T: Scalar>(g: &ModelGraph, report: &SimReport<T>, baseline: &SimReport<T>) -> T {
    let mut total = T::zero();
    for o in g.external_outputs() {
        for (a, b) in report.frame_end[o.vertex.0].iter().zip(&baseline.frame_end[o.vertex.0]) {
            if *a > *b {
                total = total + (*a - *b);
            }
        }
    }
    total
}

/// Run the pipeline for `cfg.frames` frames.
pub fn simulate<T: Scalar>(g: &ModelGraph, cfg: &SimConfig<T>) -> Result<SimReport<T>> {
    validate(g, cfg)?;
    Sim::new(g, cfg).run()
}

/// One point of a compression-ratio variability sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    /// Achieved multiply-accumulates per second.
    pub macs_per_s: f64,
    pub total_cycles: f64,
    pub stall_cycles: f64,
}

/// Scale every evicted edge's actual ratio by each multiplier and measure the
/// achieved MAC rate. Runs are independent and evaluated concurrently.
pub fn sweep_ratio_variability(g: &ModelGraph, cfg: &SimConfig<f64>, multipliers: &[f64], freq_hz: f64) -> Result<Vec<SweepPoint>> {
    let work: f64 = g.vertices().iter().map(|v| macs(v) as f64).sum::<f64>() * cfg.frames as f64;
    multipliers
        .par_iter()
        .map(|m| {
            let mut c = cfg.clone();
            for d in &mut c.evicted {
                for r in &mut d.ratio_trace {
                    *r *= *m;
                }
            }
            let rep = simulate(g, &c)?;
            Ok(SweepPoint {
                multiplier: *m,
                macs_per_s: work / (rep.total_cycles / freq_hz),
                total_cycles: rep.total_cycles,
                stall_cycles: rep.total_stall(),
            })
        })
        .collect()
}

/// CSV dump of a waveform: `cycle,vertex,event`.
pub fn waveform_csv<T: Scalar>(report: &SimReport<T>) -> String {
    let mut out = String::from("cycle,vertex,event\n");
    for w in &report.waveform {
        out.push_str(&format!("{},{},{:?}\n", w.cycle.to_f64(), w.vertex, w.event));
    }
    out
}
