use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the curation stages can report.
///
/// [`Error::exit_code`] maps each variant onto the CLI's exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("schema error on field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("template error on placeholder `{placeholder}`: {message}")]
    Template {
        placeholder: String,
        message: String,
    },

    #[error("unparseable model response: {0}")]
    Response(String),

    #[error("{what} out of range: {value}")]
    Range { what: String, value: String },

    #[error("correction response is empty after stripping the preamble")]
    EmptyCorrection,

    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("score file does not cover {} document(s): {}", .missing.len(), .missing.join(", "))]
    Coverage { missing: Vec<String> },

    #[error("keyword table is empty after stopword removal")]
    EmptyTable,

    #[error("insufficient vocabulary: asked for {requested} keywords, table has {available}")]
    InsufficientVocabulary { requested: usize, available: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("export error: {0}")]
    Export(String),

    #[error("{stage} failed at {context}: {source}")]
    Stage {
        stage: String,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("run directory is locked by another process ({})", .0.display())]
    Locked(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn range(what: impl Into<String>, value: impl ToString) -> Self {
        Error::Range {
            what: what.into(),
            value: value.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str, context: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// 1 = usage/config, 2 = data, 3 = backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Plan(_)
            | Error::Policy(_)
            | Error::Template { .. }
            | Error::Locked(_) => 1,
            Error::Transport { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
