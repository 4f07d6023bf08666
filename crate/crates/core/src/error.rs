use std::fmt;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("undefined mean: {0}")]
    UndefinedMean(&'static str),
    #[error("impossible target: {0}")]
    ImpossibleTarget(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("normalization error: zero-norm vector(s) {0}")]
    Normalization(String),
    #[error("token id {id} outside vocabulary 1..={vocab}")]
    Vocabulary { id: usize, vocab: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("alignment error: gold durations sum to {sum} but utterance has {frames} frames")]
    Alignment { sum: usize, frames: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Short display of a list of ids for error messages.
pub(crate) struct IdList<'a>(pub &'a [String]);

impl fmt::Display for IdList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown: Vec<&str> = self.0.iter().take(8).map(String::as_str).collect();
        write!(f, "[{}", shown.join(", "))?;
        if self.0.len() > 8 {
            write!(f, ", … {} more", self.0.len() - 8)?;
        }
        write!(f, "]")
    }
}
