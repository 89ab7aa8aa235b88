//! Provenance records written next to every output.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// Version string embedded in every manifest: the crate version plus the
/// `git describe` output captured at build time.
pub fn version_string() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SSM_LAB_GIT_DESCRIBE"))
}

/// A manifest: the command, the effective config and command-specific
/// details.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub version: String,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub details: Value,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, details: Value) -> Self {
        Self { version: version_string(), command, config, details }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
