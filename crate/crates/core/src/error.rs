//! Crate-wide error type.
//!
//! One enum keeps the public API small; variants carry enough structure
//! (ids, line numbers, offending values) for callers to report precisely
//! what went wrong without string matching.

use reclab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two catalog entries share an item id.
    #[error("duplicate item id {id} in catalog")]
    DuplicateItem { id: u32 },

    /// An item failed catalog validation (empty title, embedded newline, ...).
    #[error("invalid item {id}: {reason}")]
    InvalidItem { id: u32, reason: String },

    /// A sequence or sample references an item the catalog does not contain.
    #[error("unknown item id {id} referenced by {context}")]
    UnknownItem { id: u32, context: String },

    /// An interaction sequence is too short to split into history and target.
    #[error("sequence for user {user_id} has {len} interactions; need at least 2")]
    SequenceTooShort { user_id: u32, len: usize },

    /// A line of a JSONL file failed to parse.
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    /// Configuration validation failed; every violation is listed.
    #[error("invalid configuration:\n{}", .violations.join("\n"))]
    InvalidConfig { violations: Vec<String> },

    /// A candidate set broke one of its structural rules.
    #[error("invalid candidate set for target {target_id}: {reason}")]
    InvalidCandidates { target_id: u32, reason: String },

    /// A vocabulary file did not have the expected layout.
    #[error("malformed vocabulary: {0}")]
    MalformedVocab(String),

    /// A token sequence does not fit in the model's context window.
    #[error("sequence of {len} tokens exceeds the model context of {max}")]
    ContextOverflow { len: usize, max: usize },

    /// The world description cannot produce the requested data.
    #[error("unsatisfiable world: {0}")]
    InvalidWorld(String),

    /// A reasoning record was required but absent.
    #[error("no reasoning record for user {user_id}")]
    MissingRecord { user_id: u32 },

    /// A reasoning record was attached without passing the leakage scrub.
    #[error("reasoning record for user {user_id} is not sanitized")]
    UnsanitizedRecord { user_id: u32 },

    /// A generation client reply failed validation after all retries.
    #[error("generation failed after {attempts} attempts: {last_error}")]
    GenerationFailed { attempts: usize, last_error: String },

    /// A generated reply failed a structural check.
    #[error("malformed generation: {0}")]
    MalformedGeneration(String),

    /// A remote endpoint could not be reached or answered with an error.
    #[error("remote call failed: {0}")]
    Remote(String),

    /// An environment variable holding a credential is missing.
    #[error("environment variable {name} is not set")]
    MissingEnvVar { name: String },

    /// A quality rubric reply was not the JSON shape the grader asked for.
    #[error("malformed rubric reply: {0}")]
    MalformedRubric(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a file-path prefix to an error message, preserving the variant
    /// for structured errors that callers might match on.
    pub fn in_file(self, path: &std::path::Path) -> Error {
        match self {
            Error::MalformedLine { line, message } => Error::MalformedLine {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        }
    }
}
