//! Experiment configuration: strict JSON plus `key.path=value` overrides.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "output_dir": "runs/ring",
//!   "dataset": { "kind": "ring", "n": 4000, "components": 8, "radius": 2.0, "sigma": 0.2 },
//!   "model": "gan",
//!   "architecture": "toy-2d",
//!   "train": { "total_steps": 8000, "labeled_per_class": 100 },
//!   "scorers": ["nd-gan", "entropy", "knn5"]
//! }
//! ```
//!
//! `seed` is mandatory. Unknown keys anywhere are rejected with their JSON
//! path. The master seed overrides `train.seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ndgan_core::data::{gen_ring_mixture, Dataset, SplitTag};
use ndgan_core::gan::{GanArchitecture, TrainConfig};
use ndgan_core::rng::RngStreams;
use ndgan_core::scores::ScoreKind;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NDGAN_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "ndgan-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Equal-weight Gaussians on a circle, labeled by component.
    Ring {
        n: usize,
        components: usize,
        radius: f64,
        sigma: f64,
    },
    Csv {
        path: PathBuf,
        /// Column index or header name; absent for unlabeled data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<String>,
    },
    Idx {
        images: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
    },
}

/// File-backed datasets only.
pub type DataFile = DatasetSource;

impl DatasetSource {
    pub fn describe(&self) -> String {
        match self {
            DatasetSource::Ring {
                n,
                components,
                radius,
                sigma,
            } => format!("ring(n={n}, components={components}, radius={radius}, sigma={sigma})"),
            DatasetSource::Csv { path, .. } => path.display().to_string(),
            DatasetSource::Idx { images, .. } => images.display().to_string(),
        }
    }

    pub fn files(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Ring { .. } => Vec::new(),
            DatasetSource::Csv { path, .. } => vec![path.as_path()],
            DatasetSource::Idx { images, labels } => std::iter::once(images.as_path())
                .chain(labels.as_deref())
                .collect(),
        }
    }

    /// Reads or generates the dataset; `seed` only matters for synthetic sources.
    pub fn load(&self, seed: u64, split: SplitTag) -> CliResult<Dataset> {
        match self {
            DatasetSource::Ring {
                n,
                components,
                radius,
                sigma,
            } => {
                let (mut ds, _) = gen_ring_mixture(*n, *components, *radius, *sigma, seed)?;
                ds.split = split;
                Ok(ds)
            }
            _ => crate::io::load_data_file(self, split),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Downscale {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Gan,
    /// Plain K-way classifier for the entropy, max-prob and kNN baselines.
    Classifier,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    #[serde(rename = "toy-2d")]
    Toy2d,
    Mnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchitectureChoice {
    Preset(Preset),
    Custom(GanArchitecture),
}

impl Default for ArchitectureChoice {
    fn default() -> Self {
        ArchitectureChoice::Preset(Preset::Toy2d)
    }
}

impl ArchitectureChoice {
    /// Concrete architecture for data of width `dim` with `k` classes.
    pub fn resolve(&self, dim: usize, k: usize) -> CliResult<GanArchitecture> {
        match self {
            ArchitectureChoice::Preset(Preset::Toy2d) => Ok(GanArchitecture {
                data_dim: dim,
                ..GanArchitecture::toy_2d(k)
            }),
            ArchitectureChoice::Preset(Preset::Mnist) => Ok(GanArchitecture::mnist(dim, k)),
            ArchitectureChoice::Custom(a) => {
                if a.data_dim != dim || a.num_classes != k {
                    return Err(CliError::validation(format!(
                        "architecture expects {} features and {} classes, data has {dim} and {k}",
                        a.data_dim, a.num_classes
                    )));
                }
                Ok(a.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Score files with ground truth.
    #[default]
    Plain,
    /// Train one model per held-out class and tabulate AUROC per split.
    Holdout,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default)]
    pub protocol: Protocol,
    /// Holdout classes to run; all classes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_classes: Option<Vec<usize>>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Plain,
            holdout_classes: None,
            alphas: default_alphas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NovelSpec {
    /// Uniform over the ring's grid bounds.
    Uniform { n: usize },
    Gaussian {
        n: usize,
        mean: Vec<f64>,
        variance: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub components: usize,
    pub radius: f64,
    pub sigma: f64,
    #[serde(default)]
    pub test_n: usize,
    /// Novel weight recorded in the density file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel: Option<NovelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downscale: Option<Downscale>,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub architecture: ArchitectureChoice,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scorers: Vec<String>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

/// Seeds derived from the master seed, one per purpose.
pub mod seeds {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const NOVEL_DATA: u64 = 4;
    pub const SPLITS: u64 = 5;
    pub const CLASSIFIER_INIT: u64 = 6;
}

impl ExperimentConfig {
    pub fn derived_seed(&self, purpose: u64) -> u64 {
        RngStreams::new(self.seed).derive(purpose).seed()
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn score_kinds(&self) -> CliResult<Vec<ScoreKind>> {
        self.scorers
            .iter()
            .map(|s| {
                s.parse::<ScoreKind>()
                    .map_err(|e| CliError::validation(format!("scorers: {e}")))
            })
            .collect()
    }

    /// Output directory: explicit setting, then the environment default.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_dir)
    }

    pub fn require_dataset(&self) -> CliResult<&DatasetSource> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CliError::validation("config has no `dataset`"))
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        for src in self.dataset.iter().chain(&self.test_dataset) {
            for f in src.files() {
                if !f.exists() {
                    return Err(CliError::missing(f));
                }
            }
        }
        self.train_config().validate()?;
        self.score_kinds()?;
        if let Some(d) = self.downscale {
            if d.from == 0 || d.to == 0 || d.to > d.from {
                return Err(CliError::validation(format!(
                    "downscale {}x{} -> {}x{}",
                    d.from, d.from, d.to, d.to
                )));
            }
        }
        for &a in &self.evaluation.alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::validation(format!(
                    "evaluation.alphas: {a} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Loads `dataset` (or `test_dataset`) with its derived seed and optional downscaling.
    pub fn load_dataset(&self, test: bool) -> CliResult<Dataset> {
        let (src, purpose, split) = if test {
            let src = self
                .test_dataset
                .as_ref()
                .ok_or_else(|| CliError::validation("config has no `test_dataset`"))?;
            (src, seeds::TEST_DATA, SplitTag::Test)
        } else {
            (self.require_dataset()?, seeds::TRAIN_DATA, SplitTag::Train)
        };
        load_source(src, self.derived_seed(purpose), split, self.downscale)
    }
}

pub fn load_source(
    src: &DatasetSource,
    seed: u64,
    split: SplitTag,
    downscale: Option<Downscale>,
) -> CliResult<Dataset> {
    let data = src.load(seed, split)?;
    match downscale {
        Some(d) => Ok(ndgan_core::data::downscale_images(&data, d.from, d.to)?),
        None => Ok(data),
    }
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Sets `root.a.b.c = value` for `path = "a.b.c"`, creating objects as needed.
/// `value` is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(CliError::validation(format!(
                "override `{assignment}` has an empty key"
            )));
        }
        let obj = match node {
            Value::Object(m) => m,
            other => {
                if other.is_null() {
                    *other = Value::Object(Default::default());
                    match other {
                        Value::Object(m) => m,
                        _ => unreachable!(),
                    }
                } else {
                    return Err(CliError::validation(format!(
                        "override `{assignment}`: `{}` is not an object",
                        keys[..i].join(".")
                    )));
                }
            }
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Strict deserialization with the JSON path of the first offending field.
pub fn from_value<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::validation(format!("{what}: at `{path}`: {}", e.into_inner()))
    })
}

pub fn parse_json(text: &str, origin: &Path) -> CliResult<Value> {
    serde_json::from_str(text)
        .map_err(|e| CliError::validation(format!("{}: {e}", origin.display())))
}

/// Reads a config file, applies overrides, and deserializes strictly.
pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<(ExperimentConfig, Value)> {
    let mut value = parse_json(&crate::io::read_text(path)?, path)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: ExperimentConfig = from_value(value.clone(), &path.display().to_string())?;
    Ok((config, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_keys() {
        let mut v = serde_json::json!({"seed": 1});
        apply_override(&mut v, "train.total_steps=50").unwrap();
        apply_override(&mut v, "train.generator_loss=standard").unwrap();
        apply_override(&mut v, "seed=9").unwrap();
        assert_eq!(v["train"]["total_steps"], 50);
        assert_eq!(v["train"]["generator_loss"], "standard");
        assert_eq!(v["seed"], 9);
        assert!(apply_override(&mut v, "seed.x=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn unknown_keys_and_missing_seed_are_rejected() {
        let err =
            from_value::<ExperimentConfig>(serde_json::json!({"seed": 1, "colour": 2}), "cfg")
                .unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err =
            from_value::<ExperimentConfig>(serde_json::json!({"train": {}}), "cfg").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let err = from_value::<ExperimentConfig>(
            serde_json::json!({"seed": 1, "train": {"steps": 3}}),
            "cfg",
        )
        .unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
    }

    #[test]
    fn architecture_presets_and_custom() {
        let c: ExperimentConfig = from_value(
            serde_json::json!({"seed": 1, "architecture": "mnist"}),
            "cfg",
        )
        .unwrap();
        assert_eq!(
            c.architecture
                .resolve(196, 9)
                .unwrap()
                .discriminator_hidden
                .len(),
            5
        );
        let custom = serde_json::to_value(GanArchitecture::toy_2d(3)).unwrap();
        let c: ExperimentConfig = from_value(
            serde_json::json!({"seed": 1, "architecture": custom}),
            "cfg",
        )
        .unwrap();
        assert!(c.architecture.resolve(2, 3).is_ok());
        assert!(c.architecture.resolve(2, 4).is_err());
    }

    #[test]
    fn missing_files_fail_validation() {
        let c: ExperimentConfig = from_value(
            serde_json::json!({"seed": 1, "dataset": {"kind": "csv", "path": "/nonexistent/x.csv"}}),
            "cfg",
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
    }
}
