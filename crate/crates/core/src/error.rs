use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown emotion label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate emotion label `{0}`")]
    DuplicateLabel(String),
    #[error("merge target `{target}` of `{source_name}` is not a declared label")]
    UndeclaredMergeTarget { source_name: String, target: String },
    #[error("merge cycle through `{0}`")]
    MergeCycle(String),
    #[error("VA entry for `{label}` out of range: ({valence}, {arousal})")]
    VaOutOfRange { label: String, valence: f64, arousal: f64 },
    #[error("no VA assigned to emotion `{0}`")]
    VaUnassigned(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("emotion `{0}` has no utterances to bootstrap from")]
    NoUtterances(String),
    #[error("need at least {needed} candidates, found {found}")]
    InsufficientCandidates { needed: usize, found: usize },
    #[error("candidate embeddings not materialized")]
    EmbeddingsMissing,
    #[error("turn {turn}: {source}")]
    Turn {
        turn: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}
