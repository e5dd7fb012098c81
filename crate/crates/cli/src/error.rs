use std::fmt;

/// A failed stage, printed as one machine-parsable line:
/// `error: stage=<stage> kind=<kind> [key=<key>] message="<text>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageError {
    pub stage: &'static str,
    pub kind: String,
    pub key: Option<String>,
    pub message: String,
    /// 1 for computation failures, 2 for configuration or input problems.
    pub exit_code: i32,
}

impl StageError {
    pub fn config(stage: &'static str, key: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind: "config".into(),
            key: key.map(str::to_string),
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn core(stage: &'static str, e: canopy_core::Error) -> Self {
        use canopy_core::Error as E;
        let exit_code = match e {
            E::Input(_) | E::Format { .. } | E::GeoJson { .. } | E::Io { .. } => 2,
            _ => 1,
        };
        Self {
            stage,
            kind: e.kind().to_string(),
            key: None,
            message: e.to_string(),
            exit_code,
        }
    }

    pub fn io(stage: &'static str, path: &std::path::Path, e: std::io::Error) -> Self {
        Self {
            stage,
            kind: "io".into(),
            key: None,
            message: format!("{}: {e}", path.display()),
            exit_code: 1,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} kind={}", self.stage, self.kind)?;
        if let Some(k) = &self.key {
            write!(f, " key={k}")?;
        }
        write!(f, " message={:?}", self.message)
    }
}

impl std::error::Error for StageError {}
