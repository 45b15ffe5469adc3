use std::path::PathBuf;

use invabc::abc::AbcError;
use invabc::forming_sim::SimError;
use invabc::imaging::ImageError;
use invabc::lssvr::LssvrError;
use invabc::nn::NnError;
use invabc::vae::VaeError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact from stage `{stage}`: {path} (run `invabc {stage}` first)")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("artifact {path} changed since stage `{stage}` wrote it (rerun `invabc {stage}`)")]
    StaleArtifact { stage: String, path: PathBuf },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{stage}: {count} design rows failed to simulate; first: {first}")]
    SimulationFailures {
        stage: &'static str,
        count: usize,
        first: String,
    },
    #[error("malformed artifact {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Lssvr(LssvrError),
    #[error(transparent)]
    Abc(AbcError),
    #[error(transparent)]
    Vae(VaeError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingArtifact { .. } | PipelineError::StaleArtifact { .. } => EXIT_MISSING,
            PipelineError::Numerical(_) | PipelineError::SimulationFailures { .. } => EXIT_NUMERICAL,
            _ => EXIT_FAILURE,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        PipelineError::Malformed {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite(_) => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Sim(other),
        }
    }
}

impl From<LssvrError> for PipelineError {
    fn from(e: LssvrError) -> Self {
        match e {
            LssvrError::Singular { .. } => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Lssvr(other),
        }
    }
}

impl From<AbcError> for PipelineError {
    fn from(e: AbcError) -> Self {
        match e {
            AbcError::AcceptanceFloor { .. } | AbcError::ZeroWeights { .. } | AbcError::NonFinite { .. } => {
                PipelineError::Numerical(e.to_string())
            }
            other => PipelineError::Abc(other),
        }
    }
}

impl From<VaeError> for PipelineError {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Diverged { .. } | VaeError::Nn(NnError::NonFinite(_)) => {
                PipelineError::Numerical(e.to_string())
            }
            other => PipelineError::Vae(other),
        }
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        VaeError::from(e).into()
    }
}
