use crate::BigCount;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("invalid grammar: {0}")]
    Grammar(String),

    #[error("derived tree has {size} nodes, over the {limit} limit")]
    TooLarge { size: BigCount, limit: BigCount },

    #[error("label {0:?} contains the reserved rank delimiter '#'")]
    ReservedLabel(String),

    #[error("grammar mixes ranked and unranked labels")]
    MixedRanking,

    #[error("slice bounds {lo}..={hi} out of range for a string of length {len}")]
    SliceRange { lo: BigCount, hi: BigCount, len: BigCount },

    #[error("exact comparison needs {len} symbols expanded, over the {max} limit")]
    ExactOverflow { len: BigCount, max: BigCount },

    #[error("fingerprints claimed equality but a symbol comparison disagreed; raise prime_count or use exact mode")]
    FingerprintContradiction,

    #[error("unrooted tree has odd diameter {0}; subdivide first")]
    OddDiameter(BigCount),

    #[error("invalid path: {0}")]
    Path(String),

    #[error("expansion budget exceeded: {0}")]
    Budget(String),

    #[error("qbf: {0}")]
    Qbf(String),
}
