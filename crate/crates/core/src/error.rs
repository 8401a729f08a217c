use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{kind} value {value} outside vocabulary of size {size}")]
    Vocabulary {
        kind: &'static str,
        value: i64,
        size: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite attention logits in layer {layer}")]
    NonFiniteAttention { layer: usize },

    #[error("non-finite gradient for parameter `{path}`")]
    NonFiniteGradient { path: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(
        "simulation unstable at step {step} ({reason}); last stable frame {last_stable_frame}"
    )]
    Unstable {
        step: usize,
        last_stable_frame: usize,
        reason: String,
    },

    #[error("provider failed on system {index}: {source}")]
    Provider {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
