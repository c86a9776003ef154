//! Design-space exploration for streaming CNN accelerators on FPGAs.
//!
//! The crate maps a CNN compute graph onto a modelled layer-pipelined
//! accelerator. It decides how the graph is cut into sequentially
//! reconfigured subgraphs, how much parallelism each layer gets, which
//! inter-layer buffers are spilled to off-chip memory and which fraction of
//! each weight store is streamed from DRAM. An analytical latency model is
//! cross-checked by a word-level discrete-event simulator.
//!
//! Performance types are generic over [`Scalar`]; use the aliases below for
//! the common instantiations.

pub mod codec;
pub mod device;
pub mod dse;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod layer_models;
pub mod memory;
pub mod report;
pub mod scalar;
pub mod simulator;

pub use device::DeviceSpec;
pub use error::{Error, Result};
pub use graph::{ModelGraph, Shape, Vertex, VertexId, VertexKind};
pub use layer_models::{CostTable, ResourceVector, VertexPerf};
pub use scalar::{Exact, Scalar};

/// Floating-point vertex performance, used by the DSE.
pub type Perf = VertexPerf<f64>;
/// Exact-rational vertex performance, used for model/simulator equality checks.
pub type ExactPerf = VertexPerf<Exact>;
/// Simulation report over floating-point time.
pub type SimReport = simulator::SimReport<f64>;
/// Simulation report over exact time.
pub type ExactSimReport = simulator::SimReport<Exact>;
