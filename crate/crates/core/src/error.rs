use thiserror::Error;

/// Error type shared by all lab modules.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("grid topology error: {0}")]
    Topology(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("nonlinear solver failed after {iterations} iterations (residual norms: {trace:?})")]
    Solver {
        iterations: usize,
        /// Residual pv-norm after each Newton iteration, for diagnosis.
        trace: Vec<f64>,
    },

    #[error("step {step} failed: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<CoreError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn dimension(context: impl Into<String>, expected: usize, got: usize) -> Self {
        CoreError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn at_step(step: usize, source: CoreError) -> Self {
        CoreError::AtStep {
            step,
            source: Box::new(source),
        }
    }
}
