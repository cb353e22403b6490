use std::path::PathBuf;

use crate::volume::VolumeGeometry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while decoding a volume file.
///
/// Offsets are byte positions in the (decompressed) file stream.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unsupported version {found} at offset {offset} (expected {expected})")]
    UnsupportedVersion {
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("malformed header at offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("unsupported datatype code {code} at offset {offset}")]
    UnsupportedDatatype { offset: usize, code: i32 },
    #[error("file holds {found} data but {expected} volume was requested")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error(
        "truncated payload starting at offset {offset}: expected {expected} bytes, found {actual}"
    )]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("trailing bytes after payload at offset {offset}: {extra} unexpected bytes")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("voxel value {value} at index {index} is not a valid label id")]
    InvalidLabelValue { index: usize, value: f64 },
    #[error("unrecognized file extension for {0:?} (expected .nii, .nii.gz or .mlvr)")]
    UnknownExtension(PathBuf),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch {
        left: Box<VolumeGeometry>,
        right: Box<VolumeGeometry>,
    },
    #[error("data length {actual} does not match expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("rater index out of range: {index} (expected < {num_raters})")]
    RaterOutOfRange { index: usize, num_raters: usize },
    #[error("label {label} out of range (valid ids are 0..{limit}){}", voxel_suffix(*.voxel))]
    LabelOutOfRange {
        label: u32,
        limit: u32,
        voxel: Option<usize>,
    },
    #[error("class count mismatch: {left} vs {right}")]
    ClassMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn voxel_suffix(voxel: Option<usize>) -> String {
    match voxel {
        Some(index) => format!(" at voxel {index}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
