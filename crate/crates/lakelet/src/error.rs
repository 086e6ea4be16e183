//! Error type shared across the lake engine.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LakeError>;

#[derive(Debug, Error)]
pub enum LakeError {
    // ---- storage ----
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("object already exists at {0}")]
    DuplicateObject(String),
    #[error("manifest references missing or altered file: {0}")]
    DanglingRef(String),
    #[error("commit conflict on {zone}/{dataset} after {attempts} attempts")]
    CommitConflict {
        zone: String,
        dataset: String,
        attempts: u32,
    },
    #[error("unknown manifest version {version} for {zone}/{dataset}")]
    UnknownVersion {
        zone: String,
        dataset: String,
        version: u64,
    },
    #[error("object {path} failed hash verification")]
    CorruptObject { path: String },
    #[error("object {path} is missing from the store")]
    MissingObject { path: String },

    // ---- catalog ----
    #[error("dataset {zone}/{name} is already registered")]
    AlreadyRegistered { zone: String, name: String },
    #[error("unknown dataset or node: {0}")]
    UnknownDataset(String),
    #[error("edge would create a cycle: {0}")]
    CycleDetected(String),

    // ---- batch import ----
    #[error("split column {column} is not integer-valued (first offender: {value:?})")]
    NonNumericSplitColumn { column: String, value: String },
    #[error("import aborted: {0}")]
    ImportAborted(String),

    // ---- flow engine ----
    #[error("flow spec is invalid: {0}")]
    InvalidFlowSpec(String),
    #[error("connection references missing processor or port: {0}")]
    DanglingPort(String),
    #[error("unknown processor kind: {0}")]
    UnknownProcessorKind(String),
    #[error("brand weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("flow failed in processor {processor}: {reason}")]
    FlowFailed { processor: String, reason: String },
    #[error("no provenance recorded for record {0}")]
    UnknownRecord(String),

    // ---- schema-on-read ----
    #[error("dataset {0} has no committed records")]
    EmptyDataset(String),
    #[error("schema inference failed: {0}")]
    InferFailed(String),
    #[error("read aborted at {file}:{line}: {reason}")]
    ReadAborted {
        file: String,
        line: u64,
        reason: String,
    },

    // ---- query ----
    #[error("plan error: {0}")]
    PlanError(String),

    // ---- text analytics ----
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    // ---- lake handle / config ----
    #[error("{0} is not a lake directory (run `lake init` first)")]
    NotALake(PathBuf),
    #[error("refusing to initialize non-empty directory {0}")]
    DirNotEmpty(PathBuf),
    #[error("invalid lake config: {0}")]
    InvalidConfig(String),

    // ---- plumbing ----
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
