use std::path::PathBuf;

/// Errors produced by derivation, vault, sync and CLI operations.
///
/// Messages never carry secret material: no master secret bytes, user
/// passwords, or generated/pinned password characters.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid site: {0}")]
    InvalidSite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsatisfiable password policy: {0}")]
    UnsatisfiablePolicy(String),

    #[error("no policy-compliant output after {0} attempts")]
    RetriesExhausted(u32),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("offset modulus {offset} does not match charset size {charset}")]
    ModulusMismatch { offset: u32, charset: usize },

    #[error("character at position {0} is outside the site charset")]
    CharOutOfCharset(usize),

    #[error("a vault already exists at {0}")]
    VaultExists(PathBuf),

    #[error("no vault found at {0}")]
    VaultMissing(PathBuf),

    #[error("authentication failed")]
    AuthenticationFailed,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("site requires a digital object but none was supplied")]
    MissingObject,

    #[error("signature verification failed")]
    SignatureInvalid,

    #[error("service unavailable and no cached copy: {0}")]
    Unavailable(String),

    #[error("unauthorized")]
    Unauthorized,

    #[error("forbidden")]
    Forbidden,

    #[error("version conflict: server holds version {current}")]
    VersionConflict { current: u64 },

    #[error("merge conflict unresolved after retry")]
    MergeConflictUnresolved,

    #[error("unexpected server response: {0}")]
    Protocol(String),

    #[error("vault is locked by another process")]
    Locked,

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 auth, 4 policy,
    /// 5 network, 6 conflict, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSite(_)
            | Error::InvalidParameter(_)
            | Error::MissingObject
            | Error::NotFound(_)
            | Error::VaultMissing(_) => 2,
            Error::AuthenticationFailed | Error::Unauthorized | Error::Forbidden | Error::SignatureInvalid => 3,
            Error::UnsatisfiablePolicy(_)
            | Error::RetriesExhausted(_)
            | Error::LengthMismatch { .. }
            | Error::ModulusMismatch { .. }
            | Error::CharOutOfCharset(_)
            | Error::InvariantViolation(_) => 4,
            Error::Unavailable(_) | Error::Protocol(_) => 5,
            Error::VersionConflict { .. } | Error::MergeConflictUnresolved | Error::VaultExists(_) | Error::Locked => 6,
            Error::Malformed(_) | Error::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
