//! HTTP front end: a content-addressed piece workspace plus generation
//! endpoints backed by one loaded predictor.

pub mod api;
pub mod config;
pub mod workspace;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;
use trackfill_core::controls::{ControlError, ControlTable};
use trackfill_core::predictor::ngram::NGramError;
use trackfill_core::predictor::{NGramModel, TokenPredictor, UniformPredictor};
use trackfill_core::tokenizer::Vocab;

pub use api::{router, AppState};
pub use config::{Config, ConfigError};
pub use workspace::{Workspace, WorkspaceError};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("cannot load model {path}: {source}")]
    Model { path: String, source: NGramError },
    #[error("cannot load density table {path}: {message}")]
    Table { path: String, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server stopped: {0}")]
    Io(#[from] std::io::Error),
}

pub fn load_predictor(path: Option<&Path>, vocab: &Vocab) -> Result<Arc<dyn TokenPredictor>, ServeError> {
    match path {
        None => Ok(Arc::new(UniformPredictor::new(vocab))),
        Some(p) => {
            let err = |source| ServeError::Model { path: p.display().to_string(), source };
            let file = std::fs::File::open(p).map_err(|e| err(NGramError::Io(e)))?;
            let model = NGramModel::load(std::io::BufReader::new(file), vocab).map_err(err)?;
            Ok(Arc::new(model))
        }
    }
}

pub fn load_table(path: Option<&Path>) -> Result<Option<ControlTable>, ServeError> {
    let Some(p) = path else {
        return Ok(None);
    };
    let err = |message: String| ServeError::Table { path: p.display().to_string(), message };
    let text = std::fs::read_to_string(p).map_err(|e| err(e.to_string()))?;
    ControlTable::from_json(&text).map(Some).map_err(|e: ControlError| err(e.to_string()))
}

pub fn state_from_config(cfg: &Config) -> Result<AppState, ServeError> {
    let vocab = Vocab::new();
    Ok(AppState {
        workspace: Arc::new(Workspace::open(&cfg.workspace)?),
        predictor: load_predictor(cfg.model.as_deref(), &vocab)?,
        vocab: Arc::new(vocab),
        table: load_table(cfg.density_table.as_deref())?.map(Arc::new),
        defaults: cfg.sample_params(),
    })
}

pub async fn serve(cfg: &Config) -> Result<(), ServeError> {
    let app = router(state_from_config(cfg)?);
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|source| ServeError::Bind { addr: cfg.bind.clone(), source })?;
    tracing::info!("listening on {}", cfg.bind);
    axum::serve(listener, app).await?;
    Ok(())
}
