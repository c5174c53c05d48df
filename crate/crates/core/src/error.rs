use thiserror::Error;

pub type Result<T> = std::result::Result<T, SaeError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid model definition: {0}")]
    InvalidDefinition(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),
    #[error("no resample matched y = {y} among J = {j} draws; increase J")]
    ResampleExhausted { y: f64, j: usize },
    #[error("stencil step for coordinate {coordinate} shrank below 1e-12")]
    StencilDegenerate { coordinate: usize },
    #[error("unstable bootstrap: {failed} of {total} refits failed")]
    UnstableBootstrap { failed: usize, total: usize },
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SaeError>,
    },
}

impl SaeError {
    /// Wraps the error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> SaeError {
        match self {
            e @ SaeError::Stage { .. } => e,
            e => SaeError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Strips any stage tags.
    pub fn root(&self) -> &SaeError {
        match self {
            SaeError::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            SaeError::InvalidParameter(_) => "invalid-parameter",
            SaeError::InvalidData(_) => "invalid-data",
            SaeError::InvalidDefinition(_) => "invalid-definition",
            SaeError::Unsupported(_) => "unsupported-operation",
            SaeError::DegeneratePosterior(_) => "degenerate-posterior",
            SaeError::ResampleExhausted { .. } => "resample-exhaustion",
            SaeError::StencilDegenerate { .. } => "stencil-degenerate",
            SaeError::UnstableBootstrap { .. } => "unstable-bootstrap",
            SaeError::UnknownName { .. } => "unknown-name",
            SaeError::Stage { .. } => unreachable!(),
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            SaeError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
