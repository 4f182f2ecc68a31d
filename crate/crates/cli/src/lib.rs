//! `ndgan` command-line front end: synthetic data, training, scoring,
//! evaluation and density-oracle checks.
//!
//! Every command writes its products plus a `manifest.json` into an output
//! directory. Passing that manifest back with `--manifest` repeats the run.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use commands::{Invocation, Source};
use config::DatasetSource;
use error::{CliError, CliResult};
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(
    name = "ndgan",
    version,
    about = "Novelty detection with a K+1-class GAN discriminator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ring-of-Gaussians CSVs and their density file.
    Synth(RunArgs),
    /// Train a GAN or classifier from a config.
    Train(TrainArgs),
    /// Score examples with a saved model.
    Score(ScoreArgs),
    /// AUROC / TPR from a scores file, or the holdout protocol from a config.
    Eval(EvalArgs),
    /// Check the optimal-discriminator identities on a density file.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Rerun from a manifest written by an earlier run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory (default: config value, then $NDGAN_OUT_DIR, then ./ndgan-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `feature-matching` or `standard`.
    #[arg(long)]
    pub generator_loss: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub model: Option<PathBuf>,
    /// CSV, or IDX images.
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    /// IDX labels for `--data`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV label column (index or header name).
    #[arg(long)]
    pub label_column: Option<String>,
    /// Novel examples, appended with `is-novel = true`.
    #[arg(long)]
    pub novel_data: Option<PathBuf>,
    /// Nominal reference set for kNN scorers; CSVs share `--label-column`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Comma-separated: nd-gan, fake-prob, entropy, max-prob, knn5, ...
    #[arg(long, value_delimiter = ',')]
    pub scorers: Vec<String>,
    /// Image downscaling as FROM:TO, e.g. 28:14.
    #[arg(long)]
    pub downscale: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV with an `is-novel` column.
    #[arg(long, conflicts_with = "config")]
    pub scores: Option<PathBuf>,
    /// FPR levels for the TPR columns.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Experiment config with `evaluation.protocol = "holdout"`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Density JSON.
    #[arg(long, required_unless_present = "manifest")]
    pub density: Option<PathBuf>,
    /// Grid cells per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Monte Carlo draws per class.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

fn json_string(p: &Path) -> String {
    serde_json::to_string(&p.display().to_string()).expect("string")
}

fn data_source(
    path: &Path,
    labels: Option<&PathBuf>,
    label_column: Option<&String>,
) -> DatasetSource {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        DatasetSource::Csv {
            path: path.to_path_buf(),
            label_column: label_column.cloned(),
        }
    } else {
        DatasetSource::Idx {
            images: path.to_path_buf(),
            labels: labels.cloned(),
        }
    }
}

fn parse_downscale(s: &str) -> CliResult<Value> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::validation(format!("--downscale `{s}` is not FROM:TO")))?;
    let n = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| CliError::validation(format!("--downscale `{s}` is not FROM:TO")))
    };
    Ok(json!({"from": n(a)?, "to": n(b)?}))
}

/// Inline parameters unless a manifest is given.
fn source(
    manifest: &Option<PathBuf>,
    inline: impl FnOnce() -> CliResult<Value>,
) -> CliResult<Source> {
    match manifest {
        Some(m) => Ok(Source::Manifest(m.clone())),
        None => Ok(Source::Inline(inline()?)),
    }
}

fn invocation(source: Source, common: &Common, mut extra: Vec<String>) -> Invocation {
    if let Some(out) = &common.out {
        extra.push(format!("output_dir={}", json_string(out)));
    }
    extra.extend(common.set.iter().cloned());
    Invocation {
        source,
        overrides: extra,
    }
}

fn run_source(args: &RunArgs) -> Source {
    match (&args.common.manifest, &args.config) {
        (Some(m), _) => Source::Manifest(m.clone()),
        (None, Some(c)) => Source::Config(c.clone()),
        (None, None) => unreachable!("clap requires --config or --manifest"),
    }
}

fn seed_override(seed: Option<u64>) -> Vec<String> {
    seed.map(|s| format!("seed={s}")).into_iter().collect()
}

pub fn run(cli: Cli) -> CliResult<Manifest> {
    match cli.command {
        Command::Synth(a) => {
            let inv = invocation(run_source(&a), &a.common, seed_override(a.seed));
            commands::synth::run(&inv)
        }
        Command::Train(a) => {
            let mut extra = seed_override(a.run.seed);
            if let Some(s) = a.steps {
                extra.push(format!("train.total_steps={s}"));
            }
            if let Some(g) = &a.generator_loss {
                extra.push(format!(
                    "train.generator_loss={}",
                    serde_json::to_string(g).expect("string")
                ));
            }
            let inv = invocation(run_source(&a.run), &a.run.common, extra);
            commands::train::run(&inv)
        }
        Command::Score(a) => {
            let src = source(&a.common.manifest, || {
                let mut v = json!({
                    "model": a.model.as_ref().expect("required").display().to_string(),
                    "data": data_source(a.data.as_ref().expect("required"), a.labels.as_ref(), a.label_column.as_ref()),
                    "scorers": a.scorers,
                });
                if let Some(n) = &a.novel_data {
                    v["novel_data"] = json!(data_source(n, None, None));
                }
                if let Some(r) = &a.reference {
                    v["reference"] = json!(data_source(r, None, a.label_column.as_ref()));
                }
                if let Some(d) = &a.downscale {
                    v["downscale"] = parse_downscale(d)?;
                }
                Ok(v)
            })?;
            commands::score::run(&invocation(src, &a.common, Vec::new()))
        }
        Command::Eval(a) => {
            let src = match (&a.common.manifest, &a.config, &a.scores) {
                (Some(m), _, _) => Source::Manifest(m.clone()),
                (None, Some(c), _) => Source::Config(c.clone()),
                (None, None, Some(s)) => {
                    let mut v = json!({"scores": s.display().to_string()});
                    if !a.alphas.is_empty() {
                        v["alphas"] = json!(a.alphas);
                    }
                    Source::Inline(v)
                }
                (None, None, None) => {
                    return Err(CliError::validation(
                        "eval needs --scores, --config or --manifest",
                    ));
                }
            };
            commands::eval::run(&invocation(src, &a.common, seed_override(a.seed)))
        }
        Command::Oracle(a) => {
            let src = source(&a.common.manifest, || {
                Ok(json!({"density": a.density.as_ref().expect("required").display().to_string()}))
            })?;
            let mut extra = seed_override(a.seed);
            extra.extend(a.resolution.map(|r| format!("resolution={r}")));
            extra.extend(a.tolerance.map(|t| format!("tolerance={t:e}")));
            extra.extend(a.samples.map(|n| format!("samples={n}")));
            commands::oracle::run(&invocation(src, &a.common, extra))
        }
    }
}
