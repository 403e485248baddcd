use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{module} failed in replicate {replicate}: {source}")]
    Replicate {
        module: &'static str,
        replicate: usize,
        #[source]
        source: crowdcause::Error,
    },

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: crowdcause::Error,
    },

    #[error("llm endpoint unreachable: {0}")]
    EndpointUnreachable(String),

    #[error("transcript mismatch: {0}")]
    TranscriptMismatch(String),

    #[error("io: {0}")]
    Io(String),

    #[error("{0}")]
    Service(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "ConfigError",
            CliError::Replicate { .. } => "ReplicateError",
            CliError::Module { .. } => "ModuleError",
            CliError::EndpointUnreachable(_) => "EndpointUnreachable",
            CliError::TranscriptMismatch(_) => "TranscriptMismatch",
            CliError::Io(_) => "IoError",
            CliError::Service(_) => "ServiceError",
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { field, .. } => v["field"] = json!(field),
            CliError::Replicate {
                module, replicate, ..
            } => {
                v["module"] = json!(module);
                v["replicate"] = json!(replicate);
            }
            CliError::Module { module, .. } => v["module"] = json!(module),
            _ => {}
        }
        v.to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a core error with the module it came from.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> CliResult<T>;
}

impl<T> InModule<T> for crowdcause::Result<T> {
    fn in_module(self, module: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Module { module, source })
    }
}
