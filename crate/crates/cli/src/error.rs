use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failures surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {}: {detail}", .path.display())]
    Schema { path: PathBuf, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("spatial metadata required: {0}")]
    SpatialMetadata(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] sfofr_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct ErrorReport<'a> {
    code: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn schema(path: &Path, detail: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingFile(path.to_path_buf())
        } else {
            Self::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        use sfofr_core::Error as E;
        match self {
            Self::MissingFile(_) => "missing_file",
            Self::Io { .. } => "io",
            Self::Schema { .. } => "schema_violation",
            Self::Dimension(_) => "dimension_mismatch",
            Self::SpatialMetadata(_) => "spatial_metadata_required",
            Self::Unsupported(_) => "unsupported",
            Self::Config(_) => "invalid_config",
            Self::Core(e) => match e {
                E::DimensionMismatch { .. } | E::GridMismatch(_) => "dimension_mismatch",
                E::RankDeficient { .. } => "rank_deficient",
                E::InvalidArgument(_) => "invalid_argument",
                E::NotPositiveDefinite(_) | E::SingularSystem(_) => "singular_system",
                E::NumericalFailure { .. } => "numerical_failure",
                E::OutsideMesh(_) => "outside_mesh",
                E::TooFewDraws { .. } | E::ChainTooShort { .. } => "too_few_draws",
                E::ConstantInput => "constant_input",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "missing_file" => 2,
            "io" => 3,
            "schema_violation" => 4,
            "dimension_mismatch" => 5,
            "spatial_metadata_required" => 6,
            "unsupported" => 7,
            "invalid_config" | "invalid_argument" => 8,
            "rank_deficient" | "singular_system" | "constant_input" => 9,
            "outside_mesh" => 10,
            "too_few_draws" => 11,
            _ => 12,
        }
    }

    /// `{"code": …, "exit_code": …, "message": …}`.
    pub fn to_json(&self) -> String {
        let report = ErrorReport {
            code: self.code(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}
