use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bit width {0} outside supported range 1..=8")]
    BitWidth(u8),
    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u32, bits: u8 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty reduction group")]
    EmptyGroup,
    #[error("sparsity count {count} exceeds group length {n}")]
    CountOutOfRange { count: u64, n: usize },
    #[error("group length {len} not divisible by group size {group}")]
    GroupMismatch { len: usize, group: usize },
    #[error("speculation value {0} outside [0, 1]")]
    SpecOutOfRange(f64),
    #[error("thresholds must satisfy 0 <= TH0 <= TH1 <= TH2 <= 1, got ({0}, {1}, {2})")]
    BadThresholds(f64, f64, f64),
    #[error("cycle map is {map_p}x{map_q} bits but operands are {p}x{q}")]
    MapDimMismatch { map_p: u8, map_q: u8, p: u8, q: u8 },
    #[error("approximation width {approx} exceeds operand width {width}")]
    BadApproxBits { approx: u8, width: u8 },
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("sparsity dump: {0}")]
    Dump(String),
    #[error("tensor shape {shape:?} incompatible: {reason}")]
    Shape { shape: Vec<usize>, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("layer {index} ({name}): {reason}")]
    Layer {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("non-finite intermediate in postprocess; check scale configuration")]
    NonFinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the index of the layer it occurred in.
    pub fn in_layer(self, index: usize, name: &str) -> Error {
        match self {
            e @ Error::Layer { .. } => e,
            other => Error::Layer {
                index,
                name: name.to_string(),
                reason: other.to_string(),
            },
        }
    }
}
