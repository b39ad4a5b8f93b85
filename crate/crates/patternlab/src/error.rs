//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched shapes: elements from different groups, inconsistent part
    /// sizes along shared vertices, table length vs. group order, and so on.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input outside the operation's domain (non-binary system where a binary
    /// one is required, empty frequency set, even group order in strict mode).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scalar that must be invertible modulo the group order is not.
    #[error("coprimality error: gcd({lambda}, {order}) = {gcd} != 1")]
    Coprimality { lambda: i64, order: u64, gcd: u64 },

    /// An enumeration or table would exceed the configured budget.
    #[error("resource error: {0}")]
    Resource(String),

    /// A stated precondition of a lemma/theorem does not hold on this input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A search completed its budget without finding the required object.
    #[error("search exhausted: {0}")]
    SearchExhausted(String),

    /// Cascade construction failed: a (P2) window contains no regular dilate.
    #[error("cascade error: {0}")]
    Cascade(String),

    /// An internal consistency check failed. If an input satisfying all
    /// preconditions triggers this, the implementation is wrong.
    #[error("internal check failed: {0}")]
    InternalCheck(String),

    /// Unparseable input file.
    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Precondition(_) => 2,
            Error::Resource(_) => 3,
            _ => 1,
        }
    }
}
