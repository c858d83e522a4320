use std::path::{Path, PathBuf};

use modpipe_core::attack::AttackError;
use modpipe_core::audit::AuditError;
use modpipe_core::corpus::CorpusError;
use modpipe_core::log::LogError;
use modpipe_core::marker::{ExtractError, MarkerError};
use modpipe_core::model::{ContentError, ManifestError};
use modpipe_core::pipeline::PipelineError;
use modpipe_core::trust::TrustStoreError;
use modpipe_core::watermark::WatermarkError;
use modpipe_service::ServiceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Content(#[from] ContentError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    TrustStore(#[from] TrustStoreError),
    #[error(transparent)]
    Marker(#[from] MarkerError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl CliError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_owned(),
            source,
        }
    }
}
