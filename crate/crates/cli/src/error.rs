use chatter_atlas::cluster::ClusterError;
use chatter_atlas::embed::EmbedError;
use chatter_atlas::ingest::IngestError;
use chatter_atlas::refine::RefineError;
use chatter_atlas::report::ReportError;
use chatter_atlas::similarity::SimilarityError;

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed or unusable input, or an invalid configuration.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("invalid merge spec: {0}")]
    MergeSpec(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
            CliError::MergeSpec(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

/// Exit status for a clustering that did not converge.
pub const EXIT_NOT_CONVERGED: i32 = 4;

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::EmptyDocument { .. } | EmbedError::Input(_) | EmbedError::Config(_) => {
                CliError::Input(e.to_string())
            }
            EmbedError::Protocol(_) | EmbedError::Rejected { .. } | EmbedError::Backend(_) => {
                CliError::Backend(e.to_string())
            }
            EmbedError::Cache(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Invalid(_) | ClusterError::TooLarge { .. } => CliError::Input(e.to_string()),
            ClusterError::Numeric { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Spec(m) => CliError::MergeSpec(m),
            RefineError::Cluster(c) => c.into(),
            RefineError::Similarity(s) => s.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Input(e.to_string())
    }
}
