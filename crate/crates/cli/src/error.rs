use std::path::PathBuf;

use okf_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_PARTIAL: u8 = 5;
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{failed} of {total} grid cells failed")]
    PartialGrid { failed: usize, total: usize },

    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigParse { .. } => EXIT_USAGE,
            CliError::ConfigRead { .. } | CliError::Io { .. } => EXIT_DATA,
            CliError::PartialGrid { .. } => EXIT_PARTIAL,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Core(e) => core_exit_code(e.root()),
        }
    }
}

fn core_exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidArgument(_) => EXIT_USAGE,
        CoreError::InsufficientData(_)
        | CoreError::CorruptData { .. }
        | CoreError::Parse { .. }
        | CoreError::Schema(_)
        | CoreError::Io(_)
        | CoreError::Json(_)
        | CoreError::Csv(_) => EXIT_DATA,
        CoreError::NotPositiveDefinite(_)
        | CoreError::NumericFailure(_)
        | CoreError::SingularInnovation
        | CoreError::DegenerateGeometry(_)
        | CoreError::Filter { .. }
        | CoreError::Divergence { .. } => EXIT_NUMERIC,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_have_distinct_codes() {
        let usage = CliError::Usage("x".into()).exit_code();
        let data = CliError::from(CoreError::Schema("x".into())).exit_code();
        let numeric = CliError::from(CoreError::SingularInnovation).exit_code();
        let partial = CliError::PartialGrid { failed: 1, total: 2 }.exit_code();
        let mut codes = vec![usage, data, numeric, partial, EXIT_INTERNAL];
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), 5);
        assert!(!codes.contains(&0));
    }

    #[test]
    fn filter_failures_take_the_class_of_their_cause() {
        let e = CoreError::Filter {
            trajectory: 0,
            step: 1,
            source: Box::new(CoreError::SingularInnovation),
        };
        assert_eq!(CliError::from(e).exit_code(), EXIT_NUMERIC);
        let e = CoreError::Filter {
            trajectory: 0,
            step: 1,
            source: Box::new(CoreError::Schema("x".into())),
        };
        assert_eq!(CliError::from(e).exit_code(), EXIT_DATA);
        assert_eq!(CliError::from(CoreError::InvalidArgument("x".into())).exit_code(), EXIT_USAGE);
    }
}
