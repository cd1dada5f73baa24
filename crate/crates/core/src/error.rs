//! Crate-wide error type.
//!
//! One flat enum keeps matching ergonomic for CLI consumers while still
//! carrying enough context (row indices, image ids, byte offsets) to point
//! at the offending datum.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ----- descriptor containers -----
    #[error("descriptor row {row} has {got} entries, expected {expected}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("descriptor row {row} contains a non-finite value")]
    NonFiniteValue { row: usize },
    #[error("descriptor row {row} holds a value that does not survive the f16 round-trip")]
    DtypeViolation { row: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    // ----- reduction / fusion -----
    #[error("invalid reducer dims: out_dim {out_dim} must satisfy 1 <= out_dim <= in_dim {in_dim}")]
    InvalidDims { in_dim: usize, out_dim: usize },
    #[error("fusion weight lambda must lie in [0, 1], got {value}")]
    LambdaOutOfRange { value: f32 },
    #[error("database global bank is empty")]
    EmptyDatabase,

    // ----- codebook build -----
    #[error("observation {index} references missing {what}")]
    DanglingReference {
        index: usize,
        what: &'static str,
    },
    #[error("image {image_id} has observations but no global descriptor")]
    MissingGlobal { image_id: u32 },

    // ----- search -----
    #[error("ivf index wants {n_cells} cells but the codebook has only {entries} entries")]
    TooManyCells { n_cells: usize, entries: usize },

    // ----- pose estimation -----
    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("degenerate minimal sample: {reason}")]
    DegenerateConfiguration { reason: &'static str },
    #[error("pose estimation needs at least 3 matches, got {got}")]
    TooFewMatches { got: usize },
    #[error("matrix is not a rotation (orthonormality or determinant check failed)")]
    NotARotation,

    // ----- clustering / analysis -----
    #[error("k-means k={k} exceeds the {rows} available rows")]
    KTooLarge { k: usize, rows: usize },

    // ----- synthetic scenes -----
    #[error("camera {camera} sees only {visible} points; at least {required} required")]
    InfeasibleGeometry {
        camera: usize,
        visible: usize,
        required: usize,
    },
    #[error("match keypoint ({x}, {y}) does not belong to the query image")]
    UnknownKeypoint { x: f32, y: f32 },

    // ----- file formats -----
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated at byte offset {offset} ({context})")]
    TruncatedFile {
        offset: usize,
        context: &'static str,
    },
    #[error("query bank dim {query_dim} does not fit the codebook (dim {expected})")]
    ReducerMismatch { query_dim: usize, expected: usize },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("no intrinsics entry for image \"{name}\"")]
    MissingIntrinsics { name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
