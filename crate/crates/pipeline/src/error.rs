use std::path::PathBuf;

use forge_gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("output was built with a different configuration (fingerprint {found}, current {expected}); use a fresh output directory")]
    ConfigDrift { expected: String, found: String },
    #[error("corrupt manifest {path}:{line}: {reason}")]
    CorruptManifest { path: PathBuf, line: usize, reason: String },
    #[error("no manifest at {0}")]
    NoManifest(PathBuf),
    #[error("gateway down: {0}")]
    GatewayDown(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] forge_core::Error),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Review(#[from] forge_review::ReviewError),
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        if e.is_unavailable() {
            PipelineError::GatewayDown(e.to_string())
        } else {
            PipelineError::Gateway(e)
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| PipelineError::Io { path: path.into(), source })
    }
}
