use serde::Serialize;
use thiserror::Error;

/// Failures reported by the command line, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", fmt_config(.key, .message))]
    Config { key: Option<String>, message: String },

    #[error("{0}")]
    Budget(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{0}")]
    Io(String),
}

fn fmt_config(key: &Option<String>, message: &str) -> String {
    match key {
        Some(k) => format!("{k}: {message}"),
        None => message.to_string(),
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<&'a str>,
    message: String,
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: ErrorBody<'a>,
    exit_code: i32,
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { key: Some(key.into()), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Budget(_) => "budget",
            CliError::Io(_) => "io",
        }
    }

    /// Single-line JSON document describing the failure.
    pub fn to_json(&self) -> String {
        let (key, message) = match self {
            CliError::Config { key, message } => (key.as_deref(), message.clone()),
            other => (None, other.to_string()),
        };
        let doc = ErrorDoc { error: ErrorBody { kind: self.kind(), key, message }, exit_code: self.exit_code() };
        serde_json::to_string(&doc).expect("error document serializes")
    }

    /// Classify a library error; `scope` prefixes parameter names (`graph`, `experiment`).
    pub fn from_core(scope: &str, e: loopperc::Error) -> Self {
        use loopperc::Error as E;
        match e {
            E::InvalidParameter { name, message } => CliError::config(format!("{scope}.{name}"), message),
            E::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            E::InvalidVertex(_) | E::InvalidEdge(_) | E::EmptySet | E::NotTransient { .. } | E::TooFewSamples { .. } => {
                CliError::Config { key: Some(scope.to_string()), message: e.to_string() }
            }
            E::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
