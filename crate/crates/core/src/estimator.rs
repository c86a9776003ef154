//! Analytical pipeline-depth, interval and batch-latency model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, VertexId};
use crate::layer_models::{vertex_perf, VertexPerf};
use crate::scalar::Scalar;

/// Per-vertex performance at the given parallelism levels (indexed by vertex).
pub fn graph_perf<T: Scalar>(g: &ModelGraph, p: &[u64]) -> Result<Vec<VertexPerf<T>>> {
    if p.len() != g.len() {
        return Err(Error::Config(format!("{} parallelism values for {} vertices", p.len(), g.len())));
    }
    g.vertices().iter().zip(p).map(|(v, p)| vertex_perf(v, *p)).collect()
}

fn check<T>(g: &ModelGraph, perf: &[VertexPerf<T>], v: VertexId) -> Result<()> {
    if perf.len() != g.len() {
        return Err(Error::Config(format!("{} perf records for {} vertices", perf.len(), g.len())));
    }
    if v.0 >= g.len() {
        return Err(Error::UnknownVertex(v.to_string()));
    }
    Ok(())
}

/// Frame delivery window of every vertex as seen downstream: a vertex cannot
/// emit faster than the slowest window feeding it, so
/// `W(v) = max(λ_v + ρ_v, W(a))` over its ancestors.
pub fn effective_windows<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>]) -> Vec<T> {
    let order = g.topological_order().expect("graphs are acyclic by construction");
    let mut w = vec![T::zero(); g.len()];
    for v in order {
        let mut best = perf[v.0].window();
        for e in g.in_edges(v).iter().flatten() {
            best = best.max_of(w[g.edge(*e).src.0]);
        }
        w[v.0] = best;
    }
    w
}

fn interval_from(g: &ModelGraph, windows: &[impl Scalar], v: VertexId) -> Option<usize> {
    g.in_edges(v)
        .iter()
        .flatten()
        .map(|e| g.edge(*e).src.0)
        .reduce(|a, b| if windows[b] > windows[a] { b } else { a })
}

/// Largest delivery window among the direct ancestors of `v`.
pub fn interval_prev<T: Scalar>(g: &ModelGraph, v: VertexId, perf: &[VertexPerf<T>]) -> Result<T> {
    check(g, perf, v)?;
    let w = effective_windows(g, perf);
    interval_from(g, &w, v)
        .map(|a| w[a])
        .ok_or_else(|| Error::NoAncestors(g.vertex(v).id.clone()))
}

fn rate_with<T: Scalar>(g: &ModelGraph, v: VertexId, perf: &[VertexPerf<T>], w: &[T]) -> T {
    match interval_from(g, w, v) {
        None => perf[v.0].r_in,
        Some(a) => T::from_u64(perf[v.0].sigma_in) / w[a],
    }
}

/// Input rate of `v` while the pipeline fills: the standard rate for source
/// vertices, otherwise the input size spread over the ancestor interval.
pub fn initiation_rate<T: Scalar>(g: &ModelGraph, v: VertexId, perf: &[VertexPerf<T>]) -> Result<T> {
    check(g, perf, v)?;
    let w = effective_windows(g, perf);
    Ok(rate_with(g, v, perf, &w))
}

/// Fill delay of every vertex: the largest sum of `ρ_n / r_st(n)` over all
/// paths from a source vertex to it (inclusive).
pub fn delays<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>]) -> Vec<T> {
    let w = effective_windows(g, perf);
    let order = g.topological_order().expect("graphs are acyclic by construction");
    let mut d = vec![T::zero(); g.len()];
    for v in order {
        let own = perf[v.0].rho / rate_with(g, v, perf, &w);
        let mut best = T::zero();
        for e in g.in_edges(v).iter().flatten() {
            best = best.max_of(d[g.edge(*e).src.0]);
        }
        d[v.0] = best + own;
    }
    d
}

pub fn vertex_delay<T: Scalar>(g: &ModelGraph, v: VertexId, perf: &[VertexPerf<T>]) -> Result<T> {
    check(g, perf, v)?;
    Ok(delays(g, perf)[v.0])
}

/// Pipeline depth of the whole graph (`d_p`).
pub fn graph_pipeline_depth<T: Scalar>(g: &ModelGraph, perf: &[VertexPerf<T>]) -> Result<T> {
    if g.is_empty() {
        return Err(Error::Empty("graph has no vertices".into()));
    }
    Ok(delays(g, perf).into_iter().fold(T::zero(), T::max_of))
}

/// Steady-state cycles between frames: the slowest vertex latency.
pub fn initiation_interval<T: Scalar>(perf: &[VertexPerf<T>]) -> Result<T> {
    perf.iter()
        .map(|p| p.lambda)
        .reduce(T::max_of)
        .ok_or_else(|| Error::Empty("subgraph has no vertices".into()))
}

/// Cycle-level timing of one subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgraphTiming {
    pub ii: f64,
    pub depth: f64,
    /// Optional per-subgraph clock; the global frequency is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_hz: Option<f64>,
}

impl SubgraphTiming {
    pub fn new(ii: f64, depth: f64) -> Self {
        Self { ii, depth, freq_hz: None }
    }

    /// Seconds spent executing a batch of `b` frames.
    pub fn compute_seconds(&self, b: u64, default_freq_hz: f64) -> f64 {
        (b as f64 * self.ii + self.depth) / self.freq_hz.unwrap_or(default_freq_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    /// Batch latency in seconds.
    pub t: f64,
    /// Frames per second.
    pub theta: f64,
    pub n: usize,
    pub b: u64,
    pub compute_s: f64,
    pub reconfig_s: f64,
    /// `N·t_ri / t`
    pub reconfig_share: f64,
    /// Compute seconds of each subgraph.
    pub per_subgraph_s: Vec<f64>,
}

/// `t = Σ (b·II_i + d_pi)/f + N·t_ri`
pub fn batch_latency(plan: &[SubgraphTiming], b: u64, freq_hz: f64, t_ri: f64) -> Result<f64> {
    Ok(performance(plan, b, freq_hz, t_ri)?.t)
}

/// `Θ = b / t`
pub fn throughput(t: f64, b: u64) -> f64 {
    b as f64 / t
}

pub fn performance(plan: &[SubgraphTiming], b: u64, freq_hz: f64, t_ri: f64) -> Result<PerformanceReport> {
    if plan.is_empty() {
        return Err(Error::Empty("plan has no subgraphs".into()));
    }
    if b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::Config("frequency must be positive".into()));
    }
    let per: Vec<f64> = plan.iter().map(|s| s.compute_seconds(b, freq_hz)).collect();
    let compute_s: f64 = per.iter().sum();
    let reconfig_s = plan.len() as f64 * t_ri;
    let t = compute_s + reconfig_s;
    Ok(PerformanceReport {
        t,
        theta: throughput(t, b),
        n: plan.len(),
        b,
        compute_s,
        reconfig_s,
        reconfig_share: reconfig_s / t,
        per_subgraph_s: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    fn perf(lambda: u64, rho: u64, sigma: u64) -> VertexPerf<Exact> {
        VertexPerf {
            r_in: Exact::from_ratio(sigma, lambda),
            sigma_in: sigma,
            sigma_out: sigma,
            rho: Exact::from_u64(rho),
            lambda: Exact::from_u64(lambda),
            r_out: Exact::from_ratio(sigma, lambda),
            p: 1,
        }
    }

    fn graph(vertices: &[&str], edges: &[(&str, &str, usize)], input: &str) -> ModelGraph {
        let v: Vec<String> = vertices.iter().map(|v| format!(r#"{{"id":"{v}","kind":"{}"}}"#, if v.starts_with('j') { "Concat" } else { "Relu" })).collect();
        let e: Vec<String> = edges
            .iter()
            .map(|(s, d, k)| format!(r#"{{"src":"{s}","dst":"{d}","dst_slot":{k}}}"#))
            .collect();
        ModelGraph::parse(&format!(
            r#"{{"name":"t","input":{{"id":"{input}","shape":[1,4,4],"word_length":8}},"vertices":[{}],"edges":[{}]}}"#,
            v.join(","),
            e.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn interval_single_and_max() {
        let g = graph(&["a", "b"], &[("a", "b", 0)], "a");
        let p = vec![perf(100, 10, 16), perf(16, 1, 16)];
        assert_eq!(interval_prev(&g, g.find("b").unwrap(), &p).unwrap(), Exact::from_u64(110));
        assert!(matches!(interval_prev(&g, g.find("a").unwrap(), &p), Err(Error::NoAncestors(_))));

        let g = graph(&["a", "b", "c", "j"], &[("a", "j", 0), ("b", "j", 1), ("c", "a", 0), ("c", "b", 0)], "c");
        let mut p = vec![perf(1, 1, 16); g.len()];
        p[g.find("a").unwrap().0] = perf(100, 10, 16);
        p[g.find("b").unwrap().0] = perf(200, 5, 16);
        assert_eq!(interval_prev(&g, g.find("j").unwrap(), &p).unwrap(), Exact::from_u64(205));
    }

    #[test]
    fn initiation_rate_cases() {
        let g = graph(&["a", "b"], &[("a", "b", 0)], "a");
        let p = vec![perf(2047, 1, 1024), perf(1024, 1, 1024)];
        assert_eq!(initiation_rate(&g, VertexId(0), &p).unwrap(), Exact::from_ratio(1024, 2047));
        assert_eq!(initiation_rate(&g, VertexId(1), &p).unwrap(), Exact::from_ratio(1, 2));
    }

    #[test]
    fn delay_chain_and_single() {
        let g = graph(&["a", "b"], &[("a", "b", 0)], "a");
        let p = vec![perf(16, 2, 16), perf(16, 3, 16)];
        let d = delays(&g, &p);
        assert_eq!(d[0], Exact::from_u64(2));
        // b fills at 16/18 words per cycle
        assert_eq!(d[1], Exact::from_u64(2) + Exact::from_u64(3) * Exact::from_ratio(18, 16));
        assert_eq!(graph_pipeline_depth(&g, &p).unwrap(), d[1]);
    }

    #[test]
    fn table_driven_latency() {
        let plan = vec![SubgraphTiming::new(100.0, 50.0), SubgraphTiming::new(200.0, 10.0)];
        let r = performance(&plan, 2, 1000.0, 0.5).unwrap();
        assert!((r.t - (0.25 + 0.41 + 1.0)).abs() < 1e-12);
        assert_eq!(r.theta * r.t, 2.0);
        assert!(performance(&[], 1, 1.0, 0.0).is_err());
    }
}
