use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("negative entry {value} at ({row}, {col}) under elementwise sqrt")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The PCA objective normalizes the gradient, so it is undefined at G = 0.
    #[error("gradient has zero norm")]
    ZeroGradient,

    #[error("rank-deficient input: {0}")]
    RankDeficient(String),

    #[error("svd did not converge after {sweeps} sweeps (input hash {input_hash:016x})")]
    SvdNoConvergence { sweeps: usize, input_hash: u64 },

    #[error("hamiltonian family does not match state: {0}")]
    FamilyMismatch(String),

    #[error("diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
