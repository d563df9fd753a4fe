use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluator `{evaluator}` produced a non-finite value at probe {probe}")]
    EvaluatorFault { evaluator: String, probe: usize },

    #[error("degenerate finite-difference step {step:e} at scale {scale:e}")]
    DegenerateStep { step: f64, scale: f64 },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: String, message: String },

    #[error(
        "Gram matrix is near rank-deficient (condition estimate {condition:e}); \
         increase the regularization or use a different chart"
    )]
    NearRankDeficient { condition: f64 },

    #[error("point left the operative neighborhood after {iterations} iterations (last |c| = {last_norm:e})")]
    OutOfNeighborhood { iterations: usize, last_norm: f64 },

    #[error("constraint Jacobian is rank deficient at the base point (sigma_min = {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("failed to generate instance: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn parameter(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            message: message.into(),
        }
    }
}
