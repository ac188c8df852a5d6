use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("value {value} out of fixed-point range (|v| < 2^{bound_bits})")]
    FixedRange { value: f64, bound_bits: u32 },

    #[error("beaver triple already consumed")]
    TripleReused,

    #[error("correlation store exhausted at layer {layer}")]
    DealerExhausted { layer: String },

    #[error("dealer unavailable at round {round}")]
    DealerUnavailable { round: usize },

    #[error("protocol aborted in {phase} phase: {reason}")]
    Protocol { phase: String, reason: String },

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("model file error at {field}: {reason}")]
    ModelFile { field: String, reason: String },

    #[error("no boundary satisfies accuracy threshold {delta}")]
    NoBoundary { delta: f64 },

    #[error(
        "noise calibration failed: accuracy {accuracy} at lambda 0 is below threshold {delta}"
    )]
    Calibration { accuracy: f64, delta: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn protocol(phase: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Protocol {
            phase: phase.into(),
            reason: reason.into(),
        }
    }
}
