use thiserror::Error;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected geometry) do not conform.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A primitive was evaluated outside its domain (e.g. log of a
    /// non-positive value).
    #[error("domain violation in {primitive}: {detail}")]
    Domain {
        primitive: &'static str,
        detail: String,
    },

    /// Layer normalization over an axis of length 1.
    #[error("layer_norm over degenerate axis of length 1")]
    DegenerateAxis,

    /// Adam was asked to update a parameter it has no moment buffers for.
    #[error("missing optimizer state for parameter '{0}'")]
    MissingState(String),

    /// Two forward evaluations of the same graph disagreed.
    #[error("non-deterministic graph: two forward passes produced {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    /// Parameter store lookup failed.
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),

    #[error("parameter '{0}' registered twice")]
    DuplicateParam(String),

    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset file could not be parsed.
    #[error("load error at {location}: {detail}")]
    Load { location: String, detail: String },

    /// Column scaler fitted on an empty training set.
    #[error("cannot fit scaler: empty training set")]
    EmptyFit,

    /// Split protocol is infeasible for the given table.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Type partition does not cover the indicator columns exactly.
    #[error("partition error: {0}")]
    Partition(String),

    /// Gate row handed to the expert responsibility loss is not a
    /// probability vector.
    #[error("contract error: gate row sums to {0}, expected 1 within 1e-6")]
    GateContract(f64),

    /// Empty prediction/target batch.
    #[error("empty batch")]
    EmptyBatch,

    /// Model input is not min-max scaled.
    #[error("input error: indicator {index} = {value} lies outside [0,1]")]
    UnscaledInput { index: usize, value: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// Checkpoint file is malformed or from an unknown format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Loaded data is incompatible with the checkpointed schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
