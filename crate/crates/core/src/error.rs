use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("cycle detected involving vertex `{0}`")]
    Cycle(String),

    #[error("shape mismatch at `{vertex}`: {detail}")]
    ShapeMismatch { vertex: String, detail: String },

    #[error("vertex `{0}` is not in the graph")]
    UnknownVertex(String),

    #[error("invalid parallelism {p} for vertex `{vertex}`")]
    InvalidParallelism { vertex: String, p: u64 },

    #[error("vertex `{0}` carries no weights")]
    NoWeights(String),

    #[error("illegal eviction on `{edge}`: buffer depth {d_b} does not exceed max({d_b_prime}, {t_db})")]
    IllegalEviction {
        edge: String,
        d_b: u64,
        d_b_prime: u64,
        t_db: u64,
    },

    #[error("on-chip memory infeasible: {resource} needs {needed} of {available}")]
    Infeasible {
        resource: String,
        needed: u64,
        available: u64,
    },

    #[error("vertex `{0}` is unreachable from the graph input")]
    Unreachable(String),

    #[error("vertex `{0}` has no ancestors")]
    NoAncestors(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("simulation deadlock at cycle {cycle:.1}; blocked: {blocked:?}")]
    Deadlock { cycle: f64, blocked: Vec<String> },

    #[error("inconsistent configuration: {0}")]
    Config(String),

    #[error("subgraph {index}: {source}")]
    InSubgraph {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("vertex `{0}` produced no output")]
    NoOutput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
