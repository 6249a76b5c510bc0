use std::path::PathBuf;

use thiserror::Error;

use crate::deepfeat::store::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown class directory `{0}` (expected one of colon_aca, colon_n, lung_aca, lung_n, lung_scc)")]
    UnknownClassDir(String),

    #[error("cannot decode image(s): {}", .0.join(", "))]
    Undecodable(Vec<String>),

    #[error("feature store: {0}")]
    Store(#[from] StoreError),

    #[error("backend: {0}")]
    Backend(String),

    #[error("backend inference failed for `{id}`: {reason}")]
    Inference { id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("sample ids misaligned at row {row}: `{left}` vs `{right}`")]
    IdMismatch {
        row: usize,
        left: String,
        right: String,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error(
        "svm for class {class} did not converge in {iterations} iterations (max KKT violation {violation:.3e}, dual objective {dual:.6e})"
    )]
    SvmNotConverged {
        class: usize,
        iterations: usize,
        violation: f64,
        dual: f64,
    },

    #[error("cholesky factorization failed after jitter escalation to {0:e}")]
    Cholesky(f64),

    #[error("all {0} tuning trials failed")]
    AllTrialsFailed(usize),

    #[error("model decode: {0}")]
    ModelDecode(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True when the failure is caused by the caller's inputs (bad paths,
    /// arguments, configs or data files) rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_user_error(),
            Error::Io { .. }
            | Error::InvalidArgument(_)
            | Error::UnknownClassDir(_)
            | Error::Undecodable(_)
            | Error::Store(_)
            | Error::Backend(_)
            | Error::DimMismatch { .. }
            | Error::IdMismatch { .. }
            | Error::ModelDecode(_)
            | Error::Config(_)
            | Error::Json(_) => true,
            Error::Inference { .. }
            | Error::NonFiniteLoss { .. }
            | Error::SvmNotConverged { .. }
            | Error::Cholesky(_)
            | Error::AllTrialsFailed(_) => false,
        }
    }
}
