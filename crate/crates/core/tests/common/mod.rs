#![allow(dead_code)]

use stream_dse::{DeviceSpec, ModelGraph, Shape};

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn model(name: &str) -> ModelGraph {
    ModelGraph::from_file(format!("{FIXTURES}/models/{name}.json")).unwrap()
}

pub fn model_at(name: &str, dims: &[u64]) -> ModelGraph {
    model(name).with_input_shape(Shape::from_dims(dims).unwrap()).unwrap()
}

pub fn device(name: &str) -> DeviceSpec {
    DeviceSpec::from_file(format!("{FIXTURES}/devices/{name}.json")).unwrap()
}

/// Small test device with adjustable memory and bandwidth.
pub fn small_device(bram18k: u64, bandwidth_gbps: f64) -> DeviceSpec {
    DeviceSpec::parse(&format!(
        r#"{{"name":"small","freq_mhz":200,"dsp":900,"lut":200000,"ff":400000,"bram18k":{bram18k},"uram":0,
        "bandwidth_gbps":{bandwidth_gbps},"reconfig_time_s":0.01,"dma_burst_words":64,"dma_latency_cycles":512,
        "alpha_random":2.0,"max_dma_ports":4}}"#
    ))
    .unwrap()
}

/// Build a graph document from `(id, kind, attrs-json)` vertices and
/// `(src, dst, slot)` edges.
pub fn doc(input: &str, shape: &[u64], vertices: &[(&str, &str, &str)], edges: &[(&str, &str, usize)]) -> String {
    let v: Vec<String> = vertices
        .iter()
        .map(|(id, kind, attrs)| format!(r#"{{"id":"{id}","kind":"{kind}","attrs":{attrs}}}"#))
        .collect();
    let e: Vec<String> = edges
        .iter()
        .map(|(s, d, k)| format!(r#"{{"src":"{s}","dst":"{d}","dst_slot":{k}}}"#))
        .collect();
    format!(
        r#"{{"name":"t","input":{{"id":"{input}","shape":{shape:?},"word_length":8}},"vertices":[{}],"edges":[{}]}}"#,
        v.join(","),
        e.join(",")
    )
}

pub fn graph(input: &str, shape: &[u64], vertices: &[(&str, &str, &str)], edges: &[(&str, &str, usize)]) -> ModelGraph {
    ModelGraph::parse(&doc(input, shape, vertices, edges)).unwrap()
}

pub const ALL_MODELS: [&str; 7] = ["linear", "diamond", "long_skip", "unet", "unet3d", "yolov8n", "x3dm"];
