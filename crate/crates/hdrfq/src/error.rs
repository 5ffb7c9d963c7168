use thiserror::Error;

/// Errors produced by hierarchy parsing, scheduler bookkeeping, analysis and
/// simulation. Variants carry the node path or parameter that failed so CLI
/// output can point at the offending part of a document.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed hierarchy document: {0}")]
    MalformedDocument(String),

    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),

    #[error("node `{0}`: weight must be positive (got {1})")]
    NonPositiveWeight(String, f64),

    #[error("node `{0}`: internal node has no children")]
    EmptyInternalNode(String),

    #[error("hierarchy deeper than {max} levels at node `{node}`")]
    TooDeep { node: String, max: usize },

    #[error("node `{node}`: children weights sum to {sum}, expected {expected}")]
    WeightSumMismatch {
        node: String,
        sum: f64,
        expected: f64,
    },

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("node `{node}`: ancestor level {h} exceeds depth {depth}")]
    AncestorOutOfRange { node: String, h: usize, depth: usize },

    #[error("packet profile must have at least one positive entry")]
    ZeroProfile,

    #[error("packet profiles disagree on resource count ({0} vs {1})")]
    ResourceCountMismatch(usize, usize),

    #[error("no active leaves")]
    NoActiveLeaves,

    #[error("member `{0}` is not part of this group")]
    UnknownMember(String),

    #[error("member `{0}` is not active")]
    InactiveMember(String),

    #[error("member `{0}`: charge of {got} us does not match registered fixed profile ({want} us)")]
    FixedProfileViolation { member: String, got: f64, want: f64 },

    #[error("delay bounds require strictly positive demand on every resource (leaf `{0}`)")]
    ZeroDemandEntry(String),

    #[error("node `{0}` is never backlogged in the trace")]
    NeverBacklogged(String),

    #[error("inflated profile must dominate the original with a strict increase somewhere")]
    NotAnInflation,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
