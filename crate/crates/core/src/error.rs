use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("regime precondition violated: {0}")]
    Regime(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("numerical instability: {0}")]
    Numerical(String),
    #[error("divergent graph integral, witness edges {witness:?}")]
    Divergent { witness: Vec<usize> },
    #[error("infeasible weight system: {0}")]
    Infeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown recipe `{name}`; valid recipes: {valid}")]
    UnknownRecipe { name: String, valid: String },
    #[error("run cancelled")]
    Cancelled,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Resource(_) | LabError::Cancelled => 3,
            _ => 2,
        }
    }
}
