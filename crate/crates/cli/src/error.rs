//! Exit codes and the one-line JSON error format.

use serde::Serialize;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error (missing or invalid flags)
  3  invalid configuration
  4  invalid or degenerate input data
  5  schema or fingerprint mismatch between inputs and a checkpoint
  6  training failed (non-finite loss)
  7  file system error

Errors are printed to stderr as one JSON line:
  {\"error\":\"<kind>\",\"exit_code\":<n>,\"message\":\"<text>\"}";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Internal,
    Usage,
    Config,
    Data,
    Schema,
    Training,
    Io,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Internal => 1,
            ExitKind::Usage => 2,
            ExitKind::Config => 3,
            ExitKind::Data => 4,
            ExitKind::Schema => 5,
            ExitKind::Training => 6,
            ExitKind::Io => 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: ExitKind,
    exit_code: i32,
    message: &'a str,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Io, message)
    }

    /// The error as a single JSON line.
    pub fn to_line(&self) -> String {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        serde_json::to_string(&ErrorLine {
            error: self.kind,
            exit_code: self.kind.code(),
            message: &one_line,
        })
        .expect("error line serializes")
    }
}

impl From<jokerank::Error> for CliError {
    fn from(e: jokerank::Error) -> Self {
        use jokerank::Error as E;
        let kind = match &e {
            E::Config(_) => ExitKind::Config,
            E::SchemaMismatch { .. } => ExitKind::Schema,
            E::Diverged { .. } => ExitKind::Training,
            E::Io(_) => ExitKind::Io,
            E::Tensor(_) => ExitKind::Internal,
            E::Parse { .. }
            | E::DuplicateJoke(_)
            | E::UnknownJoke(_)
            | E::Timestamp(_)
            | E::Unsorted(_)
            | E::Degenerate(_)
            | E::InsufficientNegatives { .. }
            | E::Invalid(_)
            | E::Json(_) => ExitKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_and_documented() {
        let kinds = [
            ExitKind::Internal,
            ExitKind::Usage,
            ExitKind::Config,
            ExitKind::Data,
            ExitKind::Schema,
            ExitKind::Training,
            ExitKind::Io,
        ];
        let mut codes: Vec<i32> = kinds.iter().map(|k| k.code()).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), kinds.len());
        for c in codes {
            assert!(EXIT_CODES_HELP.contains(&format!("  {c}  ")), "{c}");
        }
    }

    #[test]
    fn error_line_is_single_line_json() {
        let e = CliError::config("bad\nvalue  here");
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "config");
        assert_eq!(v["exit_code"], 3);
        assert_eq!(v["message"], "bad value here");
    }

    #[test]
    fn core_errors_map_to_kinds() {
        let schema = jokerank::Error::SchemaMismatch {
            expected: "a".into(),
            found: "b".into(),
        };
        assert_eq!(CliError::from(schema).kind, ExitKind::Schema);
        assert_eq!(CliError::from(jokerank::Error::Diverged { epoch: 1, batch: 2 }).kind, ExitKind::Training);
        assert_eq!(CliError::from(jokerank::Error::Unsorted(3)).kind, ExitKind::Data);
    }
}
