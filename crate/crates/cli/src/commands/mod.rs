//! Subcommand implementations. Each takes an [`Invocation`] and returns the
//! manifest it wrote.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::{apply_override, from_value, parse_json};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

pub mod eval;
pub mod oracle;
pub mod score;
pub mod synth;
pub mod train;

/// Where a command's parameters come from.
#[derive(Clone, Debug)]
pub enum Source {
    Config(PathBuf),
    Manifest(PathBuf),
    /// Parameters assembled from command-line flags.
    Inline(Value),
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub source: Source,
    /// `key.path=value` assignments, applied in order.
    pub overrides: Vec<String>,
}

impl Invocation {
    pub fn config(path: impl Into<PathBuf>) -> Self {
        Self {
            source: Source::Config(path.into()),
            overrides: Vec::new(),
        }
    }

    pub fn manifest(path: impl Into<PathBuf>) -> Self {
        Self {
            source: Source::Manifest(path.into()),
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, assignment: impl Into<String>) -> Self {
        self.overrides.push(assignment.into());
        self
    }

    /// Base parameters before overrides.
    pub fn base_value(&self, command: &str) -> CliResult<Value> {
        match &self.source {
            Source::Config(p) => parse_json(&crate::io::read_text(p)?, p),
            Source::Manifest(p) => Manifest::load(p)?.config_for(command, p),
            Source::Inline(v) => Ok(v.clone()),
        }
    }

    fn origin(&self) -> String {
        match &self.source {
            Source::Config(p) | Source::Manifest(p) => p.display().to_string(),
            Source::Inline(_) => "command line".into(),
        }
    }

    /// Applies overrides and deserializes strictly. Returns the typed
    /// parameters and their full serialized form, defaults included.
    pub fn resolve<T: DeserializeOwned + Serialize>(&self, command: &str) -> CliResult<(T, Value)> {
        let mut value = self.base_value(command)?;
        for o in &self.overrides {
            apply_override(&mut value, o)?;
        }
        let params: T = from_value(value, &self.origin())?;
        let effective =
            serde_json::to_value(&params).map_err(|e| CliError::runtime(e.to_string()))?;
        Ok((params, effective))
    }
}
