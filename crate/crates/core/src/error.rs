use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("unknown labels: {}", .0.join(", "))]
    UnknownLabels(Vec<String>),
    #[error("label index {index} out of range for {n} labels")]
    LabelOutOfRange { index: usize, n: usize },
    #[error("negative knowledge-edge weight {weight} on `{head}` -> `{tail}`")]
    NegativeWeight { head: String, tail: String, weight: f64 },
    #[error("embedding row `{token}` has {found} entries, expected {expected}")]
    EmbeddingWidth { token: String, expected: usize, found: usize },
    #[error("no words of label `{0}` resolve in the embedding table")]
    UnresolvedLabel(String),
    #[error("{name} = {value} is outside {range}")]
    InvalidParameter { name: &'static str, value: f64, range: &'static str },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("target value {0} is not 0 or 1")]
    InvalidTarget(f64),
    #[error("class has no positive targets")]
    NoPositives,
    #[error("every class lacks positive targets")]
    AllClassesExcluded,
    #[error("GCN depth {requested} is not in 2..={max}")]
    InvalidDepth { requested: usize, max: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
