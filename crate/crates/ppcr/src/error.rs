use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("no source point has a neighbor within the association radius")]
    NoOverlap,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("rotation angle {0} rad is outside the (-pi, pi) chart")]
    OutOfChart(f64),

    #[error("optimization problem has no residual blocks")]
    EmptyProblem,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
