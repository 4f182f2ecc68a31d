//! Run manifests: everything needed to repeat a run, with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{from_value, parse_json};
use crate::error::{CliError, CliResult};
use crate::io::{sha256_file, sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Effective parameters after overrides; a rerun starts from these.
    pub config: Value,
    #[serde(default)]
    pub overrides: Vec<String>,
    /// Input path to sha256.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to sha256.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let value = parse_json(&crate::io::read_text(path)?, path)?;
        from_value(value, &path.display().to_string())
    }

    /// Parameters to rerun `command` from this manifest.
    pub fn config_for(&self, command: &str, origin: &Path) -> CliResult<Value> {
        if self.command != command {
            return Err(CliError::validation(format!(
                "{} records a `{}` run, not `{command}`",
                origin.display(),
                self.command
            )));
        }
        Ok(self.config.clone())
    }
}

/// Collects outputs of one run and writes the manifest last.
pub struct RunOutputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl RunOutputs {
    pub fn new(
        dir: PathBuf,
        command: &str,
        seed: Option<u64>,
        config: Value,
        overrides: Vec<String>,
    ) -> CliResult<Self> {
        crate::io::ensure_dir(&dir)?;
        Ok(Self {
            dir,
            manifest: Manifest {
                command: command.to_string(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config,
                overrides,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = sha256_file(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> CliResult<()> {
        paths.into_iter().try_for_each(|p| self.input(p))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest
            .outputs
            .insert(name.to_string(), sha256_hex(bytes));
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn finish(self) -> CliResult<Manifest> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(self.manifest)
    }
}
