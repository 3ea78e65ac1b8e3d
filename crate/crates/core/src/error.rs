use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} is not symmetric positive definite ({detail})")]
    NotSpd { what: String, detail: String },

    #[error("transport solver stopped after {pivots} pivots without reaching optimality (objective {objective:.6e})")]
    SolverNonConvergence { pivots: usize, objective: f64 },

    #[error("grid spacing {spacing:.4e} on axis {axis} is too coarse for the step; need at most {required:.4e}")]
    GridTooCoarse {
        axis: usize,
        spacing: f64,
        required: f64,
    },

    #[error("gradient field is not integrable: relative curl residual {residual:.3e} exceeds {limit:.3e}")]
    NotIntegrable { residual: f64, limit: f64 },

    #[error("price from Γ differencing disagrees with propagated gradient: gap {gap:.3e} exceeds {limit:.3e}")]
    InconsistentField { gap: f64, limit: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("price {price} violates the {bound} bound {value}")]
    ArbitrageBound {
        price: f64,
        bound: &'static str,
        value: f64,
    },

    #[error("rank-deficient design matrix: column {0} is linearly dependent on earlier columns")]
    RankDeficient(usize),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
