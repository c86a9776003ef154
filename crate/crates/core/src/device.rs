//! Target device description.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer_models::ResourceVector;

/// A memory primitive aspect ratio: `width` bits × `depth` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u64,
    pub depth: u64,
}

impl Geometry {
    pub const fn new(width: u64, depth: u64) -> Self {
        Self { width, depth }
    }

    pub fn bits(&self) -> u64 {
        self.width * self.depth
    }
}

fn default_bram_geometries() -> Vec<Geometry> {
    vec![
        Geometry::new(1, 16384),
        Geometry::new(2, 8192),
        Geometry::new(4, 4096),
        Geometry::new(9, 2048),
        Geometry::new(18, 1024),
        Geometry::new(36, 512),
    ]
}

fn default_uram_geometry() -> Geometry {
    Geometry::new(72, 4096)
}

fn default_lutram_bits() -> u64 {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub freq_mhz: f64,
    pub dsp: u64,
    pub lut: u64,
    pub ff: u64,
    pub bram18k: u64,
    pub uram: u64,
    pub bandwidth_gbps: f64,
    /// Time to reload the fabric between subgraphs.
    pub reconfig_time_s: f64,
    pub dma_burst_words: u64,
    /// Round trip of one DMA burst (`t_db`).
    pub dma_latency_cycles: u64,
    /// Read penalty for out-of-order access.
    pub alpha_random: f64,
    pub max_dma_ports: u64,
    #[serde(default = "default_bram_geometries")]
    pub bram_geometries: Vec<Geometry>,
    #[serde(default = "default_uram_geometry")]
    pub uram_geometry: Geometry,
    /// Bits held by one LUT used as distributed RAM.
    #[serde(default = "default_lutram_bits")]
    pub lutram_bits_per_lut: u64,
}

impl DeviceSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let d: DeviceSpec = serde_json::from_str(text).map_err(|e| Error::Schema(format!("device: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schema(format!("device `{}`: {m}", self.name)));
        if !(self.freq_mhz > 0.0) {
            return bad("freq_mhz must be positive");
        }
        if !(self.bandwidth_gbps >= 0.0) || !(self.reconfig_time_s >= 0.0) {
            return bad("bandwidth and reconfiguration time must be non-negative");
        }
        if self.dma_burst_words == 0 {
            return bad("dma_burst_words must be positive");
        }
        if !(self.alpha_random >= 1.0) {
            return bad("alpha_random must be at least 1");
        }
        if self.bram_geometries.is_empty() || self.bram_geometries.iter().any(|g| g.bits() == 0) {
            return bad("bram_geometries must be non-empty and non-degenerate");
        }
        Ok(())
    }

    pub fn resources(&self) -> ResourceVector {
        ResourceVector::new(self.dsp, self.lut, self.ff, self.bram18k, self.uram)
    }

    pub fn freq_hz(&self) -> f64 {
        self.freq_mhz * 1e6
    }

    /// Off-chip bandwidth expressed in `word_length`-bit words per cycle.
    pub fn bandwidth_words_per_cycle(&self, word_length: u32) -> f64 {
        self.bandwidth_gbps * 1e9 / (word_length as f64 * self.freq_hz())
    }

    /// Convert a words/cycle figure to Gbps.
    pub fn to_gbps(&self, words_per_cycle: f64, word_length: u32) -> f64 {
        words_per_cycle * word_length as f64 * self.freq_hz() / 1e9
    }

    /// Total depth of the two residual FIFOs left on an evicted edge (`d_b'`).
    pub fn residual_fifo_depth(&self) -> u64 {
        2 * self.dma_burst_words
    }
}
