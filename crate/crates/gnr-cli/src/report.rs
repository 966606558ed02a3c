//! Plain-text run reports: a header with the resolved config echo and an
//! environment fingerprint, then free-form sections.
//!
//! The `generated_at` stamp is the only line that varies between identical
//! runs and it stays in the header, so reports can be compared with that
//! line filtered out.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::RunConfig;
use crate::AppError;

pub struct Report {
    body: String,
}

impl Report {
    pub fn new(title: &str, config: &RunConfig) -> Report {
        let mut body = String::new();
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(body, "# {title}").unwrap();
        writeln!(body, "generated_at: {stamp}").unwrap();
        writeln!(body, "tool_version: {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(body, "seed: {}", config.seed).unwrap();
        writeln!(body).unwrap();
        writeln!(body, "## resolved config").unwrap();
        writeln!(body, "```toml").unwrap();
        body.push_str(&config.to_toml());
        writeln!(body, "```").unwrap();
        Report { body }
    }

    pub fn section(&mut self, name: &str) -> &mut Report {
        writeln!(self.body).unwrap();
        writeln!(self.body, "## {name}").unwrap();
        self
    }

    pub fn line(&mut self, text: impl AsRef<str>) -> &mut Report {
        writeln!(self.body, "{}", text.as_ref()).unwrap();
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Report {
        writeln!(self.body, "{key}: {value}").unwrap();
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), AppError> {
        std::fs::write(path, &self.body)
            .map_err(|e| AppError::Internal(format!("cannot write report {}: {e}", path.display())))
    }
}
