use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("iso values must be strictly increasing with at least two entries")]
    BadIsoValues,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("negative weight {value} at voxel {voxel}")]
    NegativeWeight { voxel: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no in-band voxels to tessellate")]
    EmptyDomain,
    #[error("variable mismatch: ({0}, {1}) vs ({2}, {3})")]
    VariableMismatch(String, String, String, String),
    #[error("not enough samples: {0}")]
    InsufficientSamples(String),
    #[error("unknown component {0}")]
    UnknownComponent(u32),
    #[error("malformed layout file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
