use thiserror::Error;

pub type Result<T, E = H2Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum H2Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular triangular matrix: |diagonal[{index}]| below threshold")]
    SingularTriangular { index: usize },

    #[error("kernel evaluated at coincident points")]
    SingularKernel,

    #[error("non-finite kernel value between points {row} and {col}")]
    NonFiniteKernel { row: usize, col: usize },

    #[error("factorization failed at pivot {pivot} after {boosts} diagonal boosts")]
    FactorizationFailed { pivot: usize, boosts: usize },

    #[error("singular diagonal block for cluster {cluster}")]
    SingularDiagonalBlock { cluster: usize },

    #[error("diagonal block missing for leaf cluster {cluster}")]
    MissingDiagonalBlock { cluster: usize },

    #[error("row lists are missing or were prepared for another block tree")]
    MissingRowLists,

    #[error("solver breakdown: {0}")]
    Breakdown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed point cloud file: {0}")]
    Parse(String),
}

pub(crate) fn check_dim(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(H2Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}
