use std::path::PathBuf;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not positive definite{}", context_suffix(*.time_index, *.cluster))]
    NotPositiveDefinite {
        time_index: Option<usize>,
        cluster: Option<usize>,
    },

    #[error("all kernel weights vanish at query time {time}; increase the bandwidth or cutoff")]
    ZeroKernelMass { time: f64 },

    #[error("cluster {cluster} has no smoothed mass at time {time} and no previous state to hold")]
    VanishedCluster { time: f64, cluster: usize },

    #[error(
        "held-out time {time} (fold {fold}) is outside the kernel reach of the training times; \
         use a larger cutoff or bandwidth"
    )]
    UnreachableHoldout { time: f64, fold: usize },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn context_suffix(time_index: Option<usize>, cluster: Option<usize>) -> String {
    match (time_index, cluster) {
        (Some(t), Some(k)) => format!(" (time index {t}, cluster {k})"),
        (Some(t), None) => format!(" (time index {t})"),
        (None, Some(k)) => format!(" (cluster {k})"),
        (None, None) => String::new(),
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::ZeroKernelMass { .. } => "zero_kernel_mass",
            Error::VanishedCluster { .. } => "vanished_cluster",
            Error::UnreachableHoldout { .. } => "unreachable_holdout",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
