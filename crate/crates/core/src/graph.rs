//! CNN compute DAG: parsing, validation, shape propagation and queries.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VertexKind {
    Conv,
    Pool,
    /// Any pointwise activation (ReLU, SiLU, sigmoid, ...).
    Relu,
    Add,
    Concat,
    Upsample,
    GlobalPool,
    /// Broadcast of one tensor to several consumers.
    Split,
}

impl VertexKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Conv" => Self::Conv,
            "Pool" => Self::Pool,
            "Relu" | "Activation" => Self::Relu,
            "Add" => Self::Add,
            "Concat" => Self::Concat,
            "Upsample" => Self::Upsample,
            "GlobalPool" => Self::GlobalPool,
            "Split" => Self::Split,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv => "Conv",
            Self::Pool => "Pool",
            Self::Relu => "Relu",
            Self::Add => "Add",
            Self::Concat => "Concat",
            Self::Upsample => "Upsample",
            Self::GlobalPool => "GlobalPool",
            Self::Split => "Split",
        }
    }

    pub fn all() -> [VertexKind; 8] {
        [
            Self::Conv,
            Self::Pool,
            Self::Relu,
            Self::Add,
            Self::Concat,
            Self::Upsample,
            Self::GlobalPool,
            Self::Split,
        ]
    }

    fn single_input(self) -> bool {
        !matches!(self, Self::Add | Self::Concat)
    }
}

impl fmt::Display for VertexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VertexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s).ok_or_else(|| Error::Config(format!("unknown vertex kind `{s}`")))
    }
}

/// Feature-map shape. 2D tensors are stored with `depth == 1` and `is_3d == false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: u64,
    pub depth: u64,
    pub height: u64,
    pub width: u64,
    pub is_3d: bool,
}

impl Shape {
    pub fn new_2d(channels: u64, height: u64, width: u64) -> Self {
        Self { channels, depth: 1, height, width, is_3d: false }
    }

    pub fn new_3d(channels: u64, depth: u64, height: u64, width: u64) -> Self {
        Self { channels, depth, height, width, is_3d: true }
    }

    pub fn from_dims(dims: &[u64]) -> Option<Self> {
        match *dims {
            [c, h, w] => Some(Self::new_2d(c, h, w)),
            [c, d, h, w] => Some(Self::new_3d(c, d, h, w)),
            _ => None,
        }
    }

    pub fn dims(&self) -> Vec<u64> {
        if self.is_3d {
            vec![self.channels, self.depth, self.height, self.width]
        } else {
            vec![self.channels, self.height, self.width]
        }
    }

    /// Spatial positions (pixels or voxels).
    pub fn positions(&self) -> u64 {
        self.depth * self.height * self.width
    }

    /// Volume in data words.
    pub fn volume(&self) -> u64 {
        self.channels * self.positions()
    }

    pub fn spatial(&self) -> [u64; 3] {
        [self.depth, self.height, self.width]
    }

    fn with_spatial(&self, channels: u64, s: [u64; 3]) -> Self {
        Self { channels, depth: s[0], height: s[1], width: s[2], is_3d: self.is_3d }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d: Vec<String> = self.dims().iter().map(u64::to_string).collect();
        f.write_str(&d.join("x"))
    }
}

/// Kind-specific attributes. Spatial triples are ordered (depth, height, width);
/// 2D layers carry a unit depth component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attrs {
    pub kernel: [u64; 3],
    pub stride: [u64; 3],
    pub padding: [u64; 3],
    pub filters: Option<u64>,
    pub groups: u64,
    pub scale: [u64; 3],
    pub function: Option<String>,
}

impl Default for Attrs {
    fn default() -> Self {
        Self {
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            filters: None,
            groups: 1,
            scale: [1, 1, 1],
            function: None,
        }
    }
}

impl Attrs {
    pub fn kernel_volume(&self) -> u64 {
        self.kernel.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
    pub attrs: Attrs,
    /// Shape arriving on each input slot.
    pub input_shapes: Vec<Shape>,
    pub output_shape: Shape,
    /// Inserted by the parser (fan-out splits); not part of the source document.
    pub synthetic: bool,
}

impl Vertex {
    /// Total input volume over all slots.
    pub fn input_words(&self) -> u64 {
        self.input_shapes.iter().map(Shape::volume).sum()
    }

    pub fn output_words(&self) -> u64 {
        self.output_shape.volume()
    }

    pub fn input_channels(&self) -> u64 {
        self.input_shapes.first().map_or(0, |s| s.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub dst_slot: usize,
    pub words: u64,
    pub word_length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

/// Input slot fed from outside the graph (the network input, or off-chip
/// memory for a subgraph).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalInput {
    pub vertex: VertexId,
    pub slot: usize,
    pub words: u64,
}

/// Tensor leaving the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalOutput {
    pub vertex: VertexId,
    pub words: u64,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub name: String,
    pub word_length: u32,
    pub input_shape: Shape,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    /// Incoming edge per slot.
    in_edges: Vec<Vec<Option<EdgeId>>>,
    out_edges: Vec<Vec<EdgeId>>,
    inputs: Vec<VertexId>,
    external_inputs: Vec<ExternalInput>,
    external_outputs: Vec<ExternalOutput>,
    /// Vertex index in the graph this one was cut from (identity for parsed graphs).
    origin: Vec<VertexId>,
    /// Parsed model (external slot fed by `input_shape`) rather than a cut subgraph.
    is_model: bool,
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Deserialize)]
struct GraphDoc {
    name: String,
    input: InputDoc,
    vertices: Vec<VertexDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Deserialize)]
struct InputDoc {
    id: String,
    shape: Vec<u64>,
    word_length: u32,
}

#[derive(Debug, Deserialize)]
struct VertexDoc {
    id: String,
    kind: String,
    #[serde(default)]
    attrs: Value,
}

#[derive(Debug, Deserialize)]
struct EdgeDoc {
    src: String,
    dst: String,
    dst_slot: usize,
}

/// Compare identifiers treating digit runs as numbers, so `Conv_2 < Conv_10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let bytes = s.as_bytes();
        let mut start = 0;
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(cb.iter()) {
        let ord = match (x.0, y.0) {
            (true, true) => {
                let xt = x.1.trim_start_matches('0');
                let yt = y.1.trim_start_matches('0');
                xt.len().cmp(&yt.len()).then_with(|| xt.cmp(yt))
            }
            _ => x.1.cmp(y.1),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

fn triple(v: Option<&Value>, default: u64, is_3d: bool, what: &str, vid: &str) -> Result<[u64; 3]> {
    let bad = || Error::Schema(format!("vertex `{vid}`: attribute `{what}` must be an integer or list"));
    match v {
        None | Some(Value::Null) => Ok(if is_3d { [default; 3] } else { [1, default, default] }),
        Some(Value::Number(n)) => {
            let x = n.as_u64().ok_or_else(bad)?;
            Ok(if is_3d { [x; 3] } else { [if what == "padding" { 0 } else { 1 }, x, x] })
        }
        Some(Value::Array(a)) => {
            let xs: Vec<u64> = a.iter().map(|x| x.as_u64().ok_or_else(bad)).collect::<Result<_>>()?;
            match xs.as_slice() {
                [h, w] => Ok([if what == "padding" { 0 } else { 1 }, *h, *w]),
                [d, h, w] => Ok([*d, *h, *w]),
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

fn parse_attrs(vid: &str, kind: VertexKind, raw: &Value, is_3d: bool) -> Result<Attrs> {
    let obj = match raw {
        Value::Null => None,
        Value::Object(m) => Some(m),
        _ => return Err(Error::Schema(format!("vertex `{vid}`: attrs must be an object"))),
    };
    let get = |k: &str| obj.and_then(|m| m.get(k));
    let mut a = Attrs::default();
    let (kdef, sdef) = match kind {
        VertexKind::Conv => (1, 1),
        VertexKind::Pool => (2, 2),
        _ => (1, 1),
    };
    a.kernel = triple(get("kernel"), kdef, is_3d, "kernel", vid)?;
    // a 2D default kernel triple must keep unit depth
    if !is_3d {
        a.kernel[0] = 1;
    }
    a.stride = triple(get("stride"), sdef, is_3d, "stride", vid)?;
    if !is_3d {
        a.stride[0] = 1;
    }
    a.padding = match get("padding") {
        None | Some(Value::Null) => [0; 3],
        v => triple(v, 0, is_3d, "padding", vid)?,
    };
    if !is_3d {
        a.padding[0] = 0;
    }
    a.scale = match get("scale") {
        None | Some(Value::Null) => {
            if kind == VertexKind::Upsample {
                if is_3d { [2; 3] } else { [1, 2, 2] }
            } else {
                [1; 3]
            }
        }
        v => {
            let mut s = triple(v, 1, is_3d, "scale", vid)?;
            if !is_3d {
                s[0] = 1;
            }
            s
        }
    };
    a.filters = match get("filters") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().filter(|x| *x > 0).ok_or_else(|| {
            Error::Schema(format!("vertex `{vid}`: `filters` must be a positive integer"))
        })?),
    };
    a.groups = match get("groups") {
        None | Some(Value::Null) => 1,
        Some(v) => v.as_u64().filter(|x| *x > 0).ok_or_else(|| {
            Error::Schema(format!("vertex `{vid}`: `groups` must be a positive integer"))
        })?,
    };
    a.function = get("fn").and_then(Value::as_str).map(str::to_owned);
    if kind == VertexKind::Conv && a.filters.is_none() {
        return Err(Error::Schema(format!("vertex `{vid}`: Conv requires `filters`")));
    }
    if a.stride.iter().any(|s| *s == 0) || a.kernel.iter().any(|k| *k == 0) || a.scale.iter().any(|s| *s == 0) {
        return Err(Error::Schema(format!("vertex `{vid}`: kernel/stride/scale must be positive")));
    }
    Ok(a)
}

fn window_out(input: u64, k: u64, s: u64, p: u64) -> Option<u64> {
    let padded = input + 2 * p;
    if padded < k {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

/// Output shape of a vertex given its per-slot input shapes.
pub fn infer_shape(id: &str, kind: VertexKind, attrs: &Attrs, inputs: &[Shape]) -> Result<Shape> {
    let mismatch = |detail: String| Error::ShapeMismatch { vertex: id.to_owned(), detail };
    let first = *inputs.first().ok_or_else(|| mismatch("no input shape".into()))?;
    let windowed = |channels: u64| -> Result<Shape> {
        let s = first.spatial();
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = window_out(s[i], attrs.kernel[i], attrs.stride[i], attrs.padding[i]).ok_or_else(|| {
                mismatch(format!("kernel {:?} larger than padded input {}", attrs.kernel, first))
            })?;
        }
        Ok(first.with_spatial(channels, out))
    };
    match kind {
        VertexKind::Conv => {
            let f = attrs.filters.unwrap_or(0);
            if first.channels % attrs.groups != 0 || f % attrs.groups != 0 {
                return Err(mismatch(format!(
                    "groups {} must divide channels {} and filters {}",
                    attrs.groups, first.channels, f
                )));
            }
            windowed(f)
        }
        VertexKind::Pool => windowed(first.channels),
        VertexKind::Relu | VertexKind::Split => Ok(first),
        VertexKind::Add => {
            if let Some(bad) = inputs.iter().find(|s| **s != first) {
                return Err(mismatch(format!("Add inputs differ: {first} vs {bad}")));
            }
            Ok(first)
        }
        VertexKind::Concat => {
            let mut c = 0;
            for s in inputs {
                if s.spatial() != first.spatial() || s.is_3d != first.is_3d {
                    return Err(mismatch(format!("Concat spatial dims differ: {first} vs {s}")));
                }
                c += s.channels;
            }
            Ok(first.with_spatial(c, first.spatial()))
        }
        VertexKind::Upsample => {
            let s = first.spatial();
            Ok(first.with_spatial(
                first.channels,
                [s[0] * attrs.scale[0], s[1] * attrs.scale[1], s[2] * attrs.scale[2]],
            ))
        }
        VertexKind::GlobalPool => Ok(first.with_spatial(first.channels, [1, 1, 1])),
    }
}

impl ModelGraph {
    /// Parse and validate a graph document (see the README for the schema).
    pub fn parse(text: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn from_doc(doc: GraphDoc) -> Result<Self> {
        if ![8, 16, 32].contains(&doc.input.word_length) {
            return Err(Error::Schema(format!(
                "word_length must be 8, 16 or 32 (got {})",
                doc.input.word_length
            )));
        }
        let input_shape = Shape::from_dims(&doc.input.shape)
            .filter(|s| s.volume() > 0)
            .ok_or_else(|| Error::Schema("input.shape must be [C,H,W] or [C,D,H,W] with positive dims".into()))?;
        if doc.vertices.is_empty() {
            return Err(Error::Schema("graph has no vertices".into()));
        }

        // Raw vertex table (document order), then natural-order relabelling.
        struct Raw {
            id: String,
            kind: VertexKind,
            attrs: Attrs,
            synthetic: bool,
        }
        let mut raw: Vec<Raw> = Vec::with_capacity(doc.vertices.len());
        let mut index: HashMap<String, usize> = HashMap::new();
        for v in &doc.vertices {
            let kind = VertexKind::parse(&v.kind)
                .ok_or_else(|| Error::Schema(format!("vertex `{}`: unknown kind `{}`", v.id, v.kind)))?;
            if index.insert(v.id.clone(), raw.len()).is_some() {
                return Err(Error::Schema(format!("duplicate vertex id `{}`", v.id)));
            }
            let attrs = parse_attrs(&v.id, kind, &v.attrs, input_shape.is_3d)?;
            raw.push(Raw { id: v.id.clone(), kind, attrs, synthetic: false });
        }
        let input_idx = *index
            .get(&doc.input.id)
            .ok_or_else(|| Error::Schema(format!("input id `{}` is not a vertex", doc.input.id)))?;

        let mut raw_edges: Vec<(usize, usize, usize)> = Vec::with_capacity(doc.edges.len());
        for e in &doc.edges {
            let s = *index
                .get(&e.src)
                .ok_or_else(|| Error::Schema(format!("edge source `{}` is not a vertex", e.src)))?;
            let d = *index
                .get(&e.dst)
                .ok_or_else(|| Error::Schema(format!("edge target `{}` is not a vertex", e.dst)))?;
            raw_edges.push((s, d, e.dst_slot));
        }

        // Fan-out: insert a Split so every edge has one producer and one consumer.
        let n0 = raw.len();
        let mut fanout: Vec<Vec<usize>> = vec![Vec::new(); n0];
        for (i, e) in raw_edges.iter().enumerate() {
            fanout[e.0].push(i);
        }
        for v in 0..n0 {
            if fanout[v].len() > 1 && raw[v].kind != VertexKind::Split {
                let split_idx = raw.len();
                let id = format!("{}.split", raw[v].id);
                if index.contains_key(&id) {
                    return Err(Error::Schema(format!("vertex id `{id}` collides with an inserted split")));
                }
                index.insert(id.clone(), split_idx);
                raw.push(Raw { id, kind: VertexKind::Split, attrs: Attrs::default(), synthetic: true });
                for &ei in &fanout[v] {
                    raw_edges[ei].0 = split_idx;
                }
                raw_edges.push((v, split_idx, 0));
            }
        }

        // Canonical numbering: natural order of ids.
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|a, b| natural_cmp(&raw[*a].id, &raw[*b].id));
        let mut remap = vec![0; raw.len()];
        for (new, old) in order.iter().enumerate() {
            remap[*old] = new;
        }
        let n = raw.len();
        let mut in_slots: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (s, d, slot) in &raw_edges {
            in_slots[remap[*d]].push((*slot, remap[*s]));
        }
        let input = remap[input_idx];

        let mut edges = Vec::new();
        let mut in_edges: Vec<Vec<Option<EdgeId>>> = vec![Vec::new(); n];
        let mut out_edges: Vec<Vec<EdgeId>> = vec![Vec::new(); n];
        for v in 0..n {
            let rv = &raw[order[v]];
            let slots = &mut in_slots[v];
            slots.sort();
            if v == input {
                if !slots.is_empty() {
                    return Err(Error::Schema(format!("input vertex `{}` must not have incoming edges", rv.id)));
                }
                in_edges[v] = vec![None];
                continue;
            }
            if slots.is_empty() {
                return Err(Error::Schema(format!("vertex `{}` has no incoming edge", rv.id)));
            }
            for (i, (slot, _)) in slots.iter().enumerate() {
                if *slot != i {
                    return Err(Error::Schema(format!(
                        "vertex `{}`: input slots must be dense from 0 (found slot {slot})",
                        rv.id
                    )));
                }
            }
            if rv.kind.single_input() && slots.len() != 1 {
                return Err(Error::Schema(format!("vertex `{}` ({}) takes exactly one input", rv.id, rv.kind)));
            }
            for (slot, src) in slots.iter() {
                let id = EdgeId(edges.len());
                edges.push(Edge { src: VertexId(*src), dst: VertexId(v), dst_slot: *slot, words: 0, word_length: doc.input.word_length });
                in_edges[v].push(Some(id));
                out_edges[*src].push(id);
            }
        }
        for outs in &mut out_edges {
            outs.sort_by_key(|e| (edges[e.0].dst, edges[e.0].dst_slot));
        }

        let placeholder = Shape::new_2d(0, 0, 0);
        let vertices = (0..n)
            .map(|v| {
                let r = &raw[order[v]];
                Vertex {
                    id: r.id.clone(),
                    kind: r.kind,
                    attrs: r.attrs.clone(),
                    input_shapes: vec![placeholder; in_edges[v].len()],
                    output_shape: placeholder,
                    synthetic: r.synthetic,
                }
            })
            .collect();

        let mut g = ModelGraph {
            name: doc.name,
            word_length: doc.input.word_length,
            input_shape,
            vertices,
            edges,
            in_edges,
            out_edges,
            inputs: vec![VertexId(input)],
            external_inputs: vec![ExternalInput { vertex: VertexId(input), slot: 0, words: input_shape.volume() }],
            external_outputs: Vec::new(),
            origin: (0..n).map(VertexId).collect(),
            is_model: true,
        };
        g.topological_order()?;
        g.propagate_shapes()?;
        for (v, outs) in g.out_edges.iter().enumerate() {
            if outs.is_empty() {
                g.external_outputs.push(ExternalOutput { vertex: VertexId(v), words: g.vertices[v].output_words() });
            }
        }
        // Reachability: every vertex must descend from the input.
        let reach = g.descendants(g.inputs[0]);
        if let Some(v) = (0..n).find(|v| !reach[*v]) {
            return Err(Error::Schema(format!("vertex `{}` is not reachable from the input", g.vertices[v].id)));
        }
        Ok(g)
    }

    fn descendants(&self, from: VertexId) -> Vec<bool> {
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v.0], true) {
                continue;
            }
            for e in &self.out_edges[v.0] {
                stack.push(self.edges[e.0].dst);
            }
        }
        seen
    }

    fn propagate_shapes(&mut self) -> Result<()> {
        let order = self.topological_order()?;
        for v in order {
            let mut shapes = Vec::with_capacity(self.in_edges[v.0].len());
            for (slot, e) in self.in_edges[v.0].iter().enumerate() {
                let shape = match e {
                    Some(e) => self.vertices[self.edges[e.0].src.0].output_shape,
                    None => {
                        if self.is_model {
                            self.input_shape
                        } else {
                            // subgraph boundary: keep the shape recorded at cut time
                            self.vertices[v.0].input_shapes[slot]
                        }
                    }
                };
                shapes.push(shape);
            }
            let vx = &self.vertices[v.0];
            let out = infer_shape(&vx.id, vx.kind, &vx.attrs, &shapes)?;
            if out.volume() == 0 {
                return Err(Error::ShapeMismatch { vertex: vx.id.clone(), detail: "empty output".into() });
            }
            let vx = &mut self.vertices[v.0];
            vx.input_shapes = shapes;
            vx.output_shape = out;
        }
        for e in &mut self.edges {
            e.words = self.vertices[e.src.0].output_shape.volume();
        }
        for x in &mut self.external_inputs {
            x.words = self.vertices[x.vertex.0].input_shapes[x.slot].volume();
        }
        for x in &mut self.external_outputs {
            x.words = self.vertices[x.vertex.0].output_words();
        }
        Ok(())
    }

    /// Same topology with a different network input shape; shapes are re-propagated.
    pub fn with_input_shape(&self, shape: Shape) -> Result<Self> {
        if !self.is_model {
            return Err(Error::Config("only a parsed model can be resized".into()));
        }
        if shape.is_3d != self.input_shape.is_3d {
            return Err(Error::Schema("input rank cannot change".into()));
        }
        let mut g = self.clone();
        // an upsample of a 1×1×1 tensor broadcasts over the stage extent,
        // which follows the input extent
        let (old, new) = (self.input_shape.spatial(), shape.spatial());
        for v in &mut g.vertices {
            if v.kind != VertexKind::Upsample || v.input_shapes[0].spatial() != [1, 1, 1] {
                continue;
            }
            for i in 0..3 {
                let scaled = v.attrs.scale[i] * new[i];
                if scaled % old[i] != 0 || scaled == 0 {
                    return Err(Error::ShapeMismatch {
                        vertex: v.id.clone(),
                        detail: format!("broadcast extent {:?} does not scale to input {shape}", v.attrs.scale),
                    });
                }
                v.attrs.scale[i] = scaled / old[i];
            }
        }
        g.input_shape = shape;
        g.propagate_shapes()?;
        Ok(g)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.0]
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_ids(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertices.len()).map(VertexId)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len()).map(EdgeId)
    }

    pub fn find(&self, id: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v.id == id).map(VertexId)
    }

    pub fn find_edge(&self, src: VertexId, dst: VertexId) -> Option<EdgeId> {
        self.out_edges[src.0].iter().copied().find(|e| self.edges[e.0].dst == dst)
    }

    /// Incoming edge for each input slot (`None` = fed externally).
    pub fn in_edges(&self, v: VertexId) -> &[Option<EdgeId>] {
        &self.in_edges[v.0]
    }

    pub fn out_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.out_edges[v.0]
    }

    /// Vertices with no in-graph predecessors. A parsed model has exactly one.
    pub fn inputs(&self) -> &[VertexId] {
        &self.inputs
    }

    pub fn external_inputs(&self) -> &[ExternalInput] {
        &self.external_inputs
    }

    pub fn external_outputs(&self) -> &[ExternalOutput] {
        &self.external_outputs
    }

    /// Index of `v` in the graph this one was cut from.
    pub fn origin(&self, v: VertexId) -> VertexId {
        self.origin[v.0]
    }

    /// Vertices from the source document (inserted splits excluded).
    pub fn layer_count(&self) -> usize {
        self.vertices.iter().filter(|v| !v.synthetic).count()
    }

    pub fn count_kind(&self, kind: VertexKind) -> usize {
        self.vertices.iter().filter(|v| v.kind == kind && !v.synthetic).count()
    }

    /// `src→dst` label, looking through inserted splits to the real producer.
    pub fn edge_label(&self, e: EdgeId) -> String {
        let edge = &self.edges[e.0];
        let mut src = edge.src;
        while self.vertices[src.0].synthetic {
            match self.in_edges[src.0].first().copied().flatten() {
                Some(pe) => src = self.edges[pe.0].src,
                None => break,
            }
        }
        format!("{}→{}", self.vertices[src.0].id, self.vertices[edge.dst.0].id)
    }

    fn check(&self, v: VertexId) -> Result<()> {
        if v.0 < self.vertices.len() {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v.to_string()))
        }
    }

    /// Direct predecessors of `v` (empty for graph inputs).
    pub fn ancestors(&self, v: VertexId) -> Result<BTreeSet<VertexId>> {
        self.check(v)?;
        Ok(self.in_edges[v.0].iter().flatten().map(|e| self.edges[e.0].src).collect())
    }

    /// Every directed path from `src` to `trg`. The count can grow exponentially
    /// with the number of reconvergent branches; analytical code uses dynamic
    /// programming instead.
    pub fn paths(&self, src: VertexId, trg: VertexId) -> Result<Vec<Vec<VertexId>>> {
        self.check(src)?;
        self.check(trg)?;
        let can_reach = {
            // reverse reachability to prune dead branches
            let mut seen = vec![false; self.vertices.len()];
            let mut stack = vec![trg];
            while let Some(v) = stack.pop() {
                if std::mem::replace(&mut seen[v.0], true) {
                    continue;
                }
                for e in self.in_edges[v.0].iter().flatten() {
                    stack.push(self.edges[e.0].src);
                }
            }
            seen
        };
        let mut out = Vec::new();
        if !can_reach[src.0] {
            return Ok(out);
        }
        let mut path = vec![src];
        self.extend_paths(trg, &can_reach, &mut path, &mut out);
        Ok(out)
    }

    fn extend_paths(&self, trg: VertexId, can_reach: &[bool], path: &mut Vec<VertexId>, out: &mut Vec<Vec<VertexId>>) {
        let v = *path.last().expect("path is never empty");
        if v == trg {
            out.push(path.clone());
            return;
        }
        for e in &self.out_edges[v.0] {
            let next = self.edges[e.0].dst;
            if can_reach[next.0] {
                path.push(next);
                self.extend_paths(trg, can_reach, path, out);
                path.pop();
            }
        }
    }

    /// Kahn's algorithm with ties broken by vertex id.
    pub fn topological_order(&self) -> Result<Vec<VertexId>> {
        let n = self.vertices.len();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.in_edges[v].iter().flatten().count()).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|v| indeg[*v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(VertexId(v));
            for e in &self.out_edges[v] {
                let d = self.edges[e.0].dst.0;
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.push(Reverse(d));
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|v| indeg[*v] > 0).unwrap_or(0);
            return Err(Error::Cycle(self.vertices[stuck].id.clone()));
        }
        Ok(order)
    }

    /// Graph induced by `members`. Slots whose producer lies outside become
    /// external inputs; tensors consumed outside (or graph outputs) become
    /// external outputs.
    pub fn induced(&self, members: &[VertexId]) -> ModelGraph {
        let mut sorted: Vec<VertexId> = members.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut local = vec![usize::MAX; self.vertices.len()];
        for (i, v) in sorted.iter().enumerate() {
            local[v.0] = i;
        }
        let n = sorted.len();
        let mut edges = Vec::new();
        let mut in_edges: Vec<Vec<Option<EdgeId>>> = vec![Vec::new(); n];
        let mut out_edges: Vec<Vec<EdgeId>> = vec![Vec::new(); n];
        let mut external_inputs = Vec::new();
        let mut external_outputs = Vec::new();
        for (i, v) in sorted.iter().enumerate() {
            for (slot, e) in self.in_edges[v.0].iter().enumerate() {
                match e.map(|e| &self.edges[e.0]).filter(|edge| local[edge.src.0] != usize::MAX) {
                    Some(edge) => {
                        let id = EdgeId(edges.len());
                        edges.push(Edge { src: VertexId(local[edge.src.0]), dst: VertexId(i), ..*edge });
                        in_edges[i].push(Some(id));
                    }
                    None => {
                        in_edges[i].push(None);
                        external_inputs.push(ExternalInput {
                            vertex: VertexId(i),
                            slot,
                            words: self.vertices[v.0].input_shapes[slot].volume(),
                        });
                    }
                }
            }
            let leaves = self.out_edges[v.0].is_empty()
                || self.out_edges[v.0].iter().any(|e| local[self.edges[e.0].dst.0] == usize::MAX);
            if leaves {
                external_outputs.push(ExternalOutput { vertex: VertexId(i), words: self.vertices[v.0].output_words() });
            }
        }
        for (id, e) in edges.iter().enumerate() {
            out_edges[e.src.0].push(EdgeId(id));
        }
        for outs in &mut out_edges {
            outs.sort_by_key(|e| (edges[e.0].dst, edges[e.0].dst_slot));
        }
        let inputs = (0..n).filter(|i| in_edges[*i].iter().all(Option::is_none)).map(VertexId).collect();
        ModelGraph {
            name: self.name.clone(),
            word_length: self.word_length,
            input_shape: self.input_shape,
            vertices: sorted.iter().map(|v| self.vertices[v.0].clone()).collect(),
            edges,
            in_edges,
            out_edges,
            inputs,
            external_inputs,
            external_outputs,
            origin: sorted.iter().map(|v| self.origin[v.0]).collect(),
            is_model: false,
        }
    }
}
