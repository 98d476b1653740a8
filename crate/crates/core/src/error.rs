use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged at step {step}: non-finite state")]
    IntegrationDiverged { step: usize },

    #[error("unknown regime `{regime}` for system `{system}`")]
    UnknownRegime { system: String, regime: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("topology {kind} does not admit in-degree k = {k}")]
    InconsistentDegree { kind: String, k: usize },

    #[error("input matrix infeasible: {0}")]
    InfeasibleInputMatrix(String),

    #[error("ridge system is rank deficient with mu = 0; use mu > 0")]
    RankDeficient,

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("reservoir state diverged at step {step} (|r_i| >= {bound})")]
    ReservoirDiverged { step: usize, bound: f64 },

    #[error("reservoir has no trained readout")]
    Untrained,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("Lyapunov frame collapsed at step {step}; reduce the renormalization interval")]
    FrameCollapse { step: usize },

    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used for the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IntegrationDiverged { .. } => "integration_diverged",
            Error::UnknownRegime { .. } => "unknown_regime",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateData(_) => "degenerate_data",
            Error::InconsistentDegree { .. } => "inconsistent_degree",
            Error::InfeasibleInputMatrix(_) => "infeasible_input_matrix",
            Error::RankDeficient => "rank_deficient",
            Error::Solve(_) => "solve_failed",
            Error::ReservoirDiverged { .. } => "reservoir_diverged",
            Error::Untrained => "untrained",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::FrameCollapse { .. } => "frame_collapse",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}
