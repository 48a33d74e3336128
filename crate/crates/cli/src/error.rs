use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", path.as_ref().map(|p| format!(" at `{p}`")).unwrap_or_default())]
    Config { path: Option<String>, message: String },
    #[error("numeric failure: {0}")]
    Numeric(#[from] slowfast::Error),
    #[error("no classified candidates")]
    NoCandidates,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
            CliError::NoCandidates => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Numeric(_) => "numeric",
            CliError::NoCandidates => "no_candidates",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            code: i32,
            path: Option<&'a str>,
            message: String,
        }
        let path = match self {
            CliError::Config { path, .. } => path.as_deref(),
            _ => None,
        };
        let body = Body { kind: self.kind(), code: self.exit_code(), path, message: self.to_string() };
        serde_json::json!({ "error": body }).to_string()
    }
}
