//! Design reports, model-versus-simulator validation and sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceSpec;
use crate::dse::{subgraph_sim, DesignPlan};
use crate::error::{Error, Result};
use crate::estimator::PerformanceReport;
use crate::graph::ModelGraph;
use crate::layer_models::{macs, ResourceVector};
use crate::simulator::{measured_graph_depth, simulate, sweep_ratio_variability, SweepPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub resource: String,
    pub used: u64,
    pub available: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphSummary {
    pub index: usize,
    pub first: String,
    pub last: String,
    pub vertices: usize,
    pub ii_cycles: f64,
    pub depth_cycles: f64,
    pub compute_s: f64,
    pub resources: ResourceVector,
    pub bandwidth_gbps: f64,
    pub evictions: Vec<String>,
    /// Fragmented vertex and its dynamic fraction `m`.
    pub fragments: Vec<(String, f64)>,
}

/// Headline figures of a design plus per-subgraph detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub model: String,
    pub device: String,
    pub batch: u64,
    pub subgraphs_n: usize,
    pub latency_s: f64,
    pub throughput_fps: f64,
    pub macs_per_frame: u64,
    /// Multiply-accumulates per second over the whole batch latency.
    pub gmacs_per_s: f64,
    pub reconfig_share: f64,
    /// Peak use of each resource over all subgraphs.
    pub utilization: Vec<Utilization>,
    pub bandwidth_gbps: f64,
    pub bandwidth_percent: f64,
    pub subgraphs: Vec<SubgraphSummary>,
}

fn percent(used: f64, available: f64) -> f64 {
    if available > 0.0 {
        100.0 * used / available
    } else if used > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn design_report(g: &ModelGraph, plan: &DesignPlan, device: &DeviceSpec) -> DesignReport {
    let p = &plan.performance;
    let cap = device.resources();
    let mut peak = ResourceVector::default();
    let mut bw: f64 = 0.0;
    for s in &plan.subgraphs {
        let r = s.resources;
        peak = ResourceVector::new(peak.dsp.max(r.dsp), peak.lut.max(r.lut), peak.ff.max(r.ff), peak.bram18k.max(r.bram18k), peak.uram.max(r.uram));
        bw = bw.max(s.bandwidth_gbps);
    }
    let utilization = peak
        .components(&cap)
        .into_iter()
        .map(|(name, used, available)| Utilization { resource: name.into(), used, available, percent: percent(used as f64, available as f64) })
        .collect();
    let macs_per_frame: u64 = g.vertices().iter().map(macs).sum();
    let subgraphs = plan
        .subgraphs
        .iter()
        .zip(&p.per_subgraph_s)
        .map(|(s, secs)| SubgraphSummary {
            index: s.index,
            first: s.vertices.first().cloned().unwrap_or_default(),
            last: s.vertices.last().cloned().unwrap_or_default(),
            vertices: s.vertices.len(),
            ii_cycles: s.timing.ii,
            depth_cycles: s.timing.depth,
            compute_s: *secs,
            resources: s.resources,
            bandwidth_gbps: s.bandwidth_gbps,
            evictions: s.evictions.iter().map(|e| e.label.clone()).collect(),
            fragments: s.fragments.iter().map(|f| (f.vertex.clone(), f.m)).collect(),
        })
        .collect();
    DesignReport {
        model: plan.model.clone(),
        device: plan.device.clone(),
        batch: p.b,
        subgraphs_n: p.n,
        latency_s: p.t,
        throughput_fps: p.theta,
        macs_per_frame,
        gmacs_per_s: macs_per_frame as f64 * p.b as f64 / p.t / 1e9,
        reconfig_share: p.reconfig_share,
        utilization,
        bandwidth_gbps: bw,
        bandwidth_percent: percent(bw, device.bandwidth_gbps),
        subgraphs,
    }
}

impl DesignReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text summary: latency, throughput, resources with utilization,
    /// bandwidth, then one line per subgraph.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} on {} (batch {})", self.model, self.device, self.batch);
        let _ = writeln!(out, "  Latency     {:>12.2} ms", self.latency_s * 1e3);
        let _ = writeln!(out, "  Throughput  {:>12.2} fps", self.throughput_fps);
        let _ = writeln!(out, "  Workload    {:>12.2} GMAC/s", self.gmacs_per_s);
        let _ = writeln!(out, "  Subgraphs   {:>12}   (reconfig {:.2}% of latency)", self.subgraphs_n, 100.0 * self.reconfig_share);
        for u in &self.utilization {
            let _ = writeln!(out, "  {:<10}  {:>12}   ({:.0}%)", u.resource, u.used, u.percent);
        }
        let _ = writeln!(out, "  BW          {:>12.2} Gbps ({:.0}%)", self.bandwidth_gbps, self.bandwidth_percent);
        let _ = writeln!(out);
        let _ = writeln!(out, "  {:>3}  {:<16} {:<16} {:>5} {:>12} {:>12} {:>9} {:>6} {:>6} {:>6} {:>9}", "#", "first", "last", "n", "II", "depth", "ms", "DSP", "BRAM", "URAM", "Gbps");
        for s in &self.subgraphs {
            let _ = writeln!(
                out,
                "  {:>3}  {:<16} {:<16} {:>5} {:>12.0} {:>12.0} {:>9.2} {:>6} {:>6} {:>6} {:>9.2}",
                s.index, s.first, s.last, s.vertices, s.ii_cycles, s.depth_cycles, s.compute_s * 1e3, s.resources.dsp, s.resources.bram18k, s.resources.uram, s.bandwidth_gbps
            );
            for e in &s.evictions {
                let _ = writeln!(out, "         evict {e}");
            }
            for (v, m) in &s.fragments {
                let _ = writeln!(out, "         fragment {v} m={m:.3}");
            }
        }
        out
    }
}

/// Analytical versus simulated timing of one subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub subgraph: usize,
    pub depth_model: f64,
    pub depth_sim: f64,
    pub depth_dev_pct: f64,
    pub ii_model: f64,
    pub ii_sim: Option<f64>,
    pub ii_dev_pct: Option<f64>,
    pub stall_cycles: f64,
}

fn deviation(model: f64, measured: f64) -> f64 {
    if measured == 0.0 {
        if model == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        100.0 * (model - measured).abs() / measured
    }
}

/// Simulate every subgraph of `plan` for `frames` frames (at least two give
/// a steady-state interval) and compare against the plan's timing.
pub fn validate_plan(g: &ModelGraph, plan: &DesignPlan, device: &DeviceSpec, frames: u64) -> Result<Vec<ValidationRow>> {
    (0..plan.subgraphs.len())
        .into_par_iter()
        .map(|i| {
            let wrap = |e: Error| Error::InSubgraph { index: i, source: Box::new(e) };
            let (sub, cfg) = subgraph_sim(g, plan, i, device, frames).map_err(wrap)?;
            let rep = simulate(&sub, &cfg).map_err(wrap)?;
            let s = &plan.subgraphs[i];
            let depth_sim = measured_graph_depth(&rep).ok_or_else(|| wrap(Error::NoOutput(s.vertices.join(","))))?;
            Ok(ValidationRow {
                subgraph: i,
                depth_model: s.timing.depth,
                depth_sim,
                depth_dev_pct: deviation(s.timing.depth, depth_sim),
                ii_model: s.timing.ii,
                ii_sim: rep.interval,
                ii_dev_pct: rep.interval.map(|m| deviation(s.timing.ii, m)),
                stall_cycles: rep.total_stall(),
            })
        })
        .collect()
}

pub fn validation_table(rows: &[ValidationRow]) -> String {
    let mut out = format!("{:>3} {:>14} {:>14} {:>8} {:>14} {:>14} {:>8}\n", "#", "depth model", "depth sim", "dev %", "II model", "II sim", "dev %");
    for r in rows {
        let ii_sim = r.ii_sim.map_or("-".into(), |x| format!("{x:.1}"));
        let ii_dev = r.ii_dev_pct.map_or("-".into(), |x| format!("{x:.2}"));
        let _ = writeln!(out, "{:>3} {:>14.1} {:>14.1} {:>8.2} {:>14.1} {:>14} {:>8}", r.subgraph, r.depth_model, r.depth_sim, r.depth_dev_pct, r.ii_model, ii_sim, ii_dev);
    }
    out
}

/// The plan's latency model re-evaluated at each batch size.
pub fn batch_sweep(plan: &DesignPlan, batches: &[u64]) -> Result<Vec<PerformanceReport>> {
    batches.iter().map(|b| plan.performance_at(*b)).collect()
}

pub fn batch_csv(rows: &[PerformanceReport]) -> String {
    let mut out = String::from("batch,theta_fps,latency_s,reconfig_share,subgraphs\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.b, r.theta, r.t, r.reconfig_share, r.n);
    }
    out
}

/// Compression-ratio variability sweep of one subgraph of a plan.
pub fn ratio_sweep(g: &ModelGraph, plan: &DesignPlan, index: usize, device: &DeviceSpec, frames: u64, multipliers: &[f64]) -> Result<Vec<SweepPoint>> {
    let (sub, cfg) = subgraph_sim(g, plan, index, device, frames)?;
    sweep_ratio_variability(&sub, &cfg, multipliers, plan.freq_hz)
}

pub fn ratio_csv(rows: &[SweepPoint]) -> String {
    let mut out = String::from("multiplier,macs_per_s,total_cycles,stall_cycles\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.multiplier, r.macs_per_s, r.total_cycles, r.stall_cycles);
    }
    out
}

/// Gnuplot script plotting column `y` against column 1 of a CSV file.
pub fn gnuplot_script(csv: &str, x_label: &str, y_label: &str, y: usize) -> String {
    format!(
        "set datafile separator ','\nset key off\nset xlabel '{x_label}'\nset ylabel '{y_label}'\nset grid\nplot '{csv}' every ::1 using 1:{y} with linespoints\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_cases() {
        assert_eq!(deviation(110.0, 100.0), 10.0);
        assert_eq!(deviation(0.0, 0.0), 0.0);
        assert!(deviation(1.0, 0.0).is_infinite());
        assert_eq!(percent(0.0, 0.0), 0.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let rows = [SweepPoint { multiplier: 1.0, macs_per_s: 2.0, total_cycles: 3.0, stall_cycles: 0.0 }];
        assert_eq!(ratio_csv(&rows), "multiplier,macs_per_s,total_cycles,stall_cycles\n1,2,3,0\n");
        assert!(gnuplot_script("a.csv", "x", "y", 2).contains("using 1:2"));
    }
}
