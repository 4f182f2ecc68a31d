//! `score`: per-example novelty scores from a saved model.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ndgan_core::data::{Dataset, SplitTag};
use ndgan_core::gan::file::{load, ModelFile};
use ndgan_core::scores::{ModelScorer, NoveltyScorer, ProbabilisticModel, ScoreKind};
use ndgan_core::Tensor;

use super::Invocation;
use crate::config::{default_output_dir, load_source, DatasetSource, Downscale};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, RunOutputs};

pub const SCORES_FILE: &str = "scores.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreParams {
    pub model: PathBuf,
    pub data: DatasetSource,
    /// Rows appended after `data` with `is-novel = true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel_data: Option<DatasetSource>,
    /// Nominal set for kNN scorers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<DatasetSource>,
    /// Defaults to `nd-gan` for GANs and `entropy`, `max-prob` for classifiers.
    #[serde(default)]
    pub scorers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downscale: Option<Downscale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn model_dim(model: &ModelFile) -> usize {
    match model {
        ModelFile::Gan(m) => m.data_dim(),
        ModelFile::Classifier(c) => c.net().in_dim(),
    }
}

fn load_checked(
    src: &DatasetSource,
    what: &str,
    params: &ScoreParams,
    model_dim: usize,
) -> CliResult<Dataset> {
    for f in src.files() {
        if !f.exists() {
            return Err(CliError::missing(f));
        }
    }
    let data = load_source(src, 0, SplitTag::Test, params.downscale)?;
    if data.dim() != model_dim {
        return Err(CliError::validation(format!(
            "{what} {} has {} features but the model expects {model_dim}",
            src.describe(),
            data.dim()
        )));
    }
    Ok(data)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

pub fn run(inv: &Invocation) -> CliResult<Manifest> {
    let (params, effective): (ScoreParams, _) = inv.resolve("score")?;
    if !params.model.exists() {
        return Err(CliError::missing(&params.model));
    }
    let file = load(&params.model)?;
    let dim = model_dim(&file);
    let model: &dyn ProbabilisticModel = match &file {
        ModelFile::Gan(m) => m,
        ModelFile::Classifier(c) => c,
    };
    let names = if params.scorers.is_empty() {
        match file {
            ModelFile::Gan(_) => vec!["nd-gan".to_string()],
            ModelFile::Classifier(_) => vec!["entropy".to_string(), "max-prob".to_string()],
        }
    } else {
        params.scorers.clone()
    };
    let kinds = names
        .iter()
        .map(|s| {
            s.parse::<ScoreKind>()
                .map_err(|e| CliError::validation(format!("scorers: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    for k in &kinds {
        if k.needs_fake_class() && matches!(file, ModelFile::Classifier(_)) {
            return Err(CliError::validation(format!(
                "score `{k}` needs a GAN model, got a classifier"
            )));
        }
    }
    let needs_reference = kinds.iter().any(|k| matches!(k, ScoreKind::Knn(_)));
    let reference = match (&params.reference, needs_reference) {
        (Some(r), true) => Some(load_checked(r, "reference", &params, dim)?),
        (None, true) => return Err(CliError::validation("kNN scoring needs --reference")),
        _ => None,
    };

    let data = load_checked(&params.data, "data", &params, dim)?;
    let novel = match &params.novel_data {
        Some(src) => Some(load_checked(src, "novel data", &params, dim)?),
        None => None,
    };
    let x = match &novel {
        Some(n) => Tensor::vstack(&[data.features(), n.features()])?,
        None => data.features().clone(),
    };

    // `fake-prob` is always written as its own column.
    let scorers = kinds
        .iter()
        .filter(|&&k| k != ScoreKind::FakeProb)
        .map(|&k| match k {
            ScoreKind::Knn(n) => {
                ModelScorer::knn(model, reference.as_ref().expect("checked").features(), n)
            }
            _ => ModelScorer::new(k, model),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let columns = scorers
        .iter()
        .map(|s| s.score(&x))
        .collect::<Result<Vec<_>, _>>()?;
    let probs = model.class_probs(&x)?;

    let mut csv = String::from("example-id,predicted-class,fake-prob");
    for s in &scorers {
        let _ = write!(csv, ",{}", s.name());
    }
    if novel.is_some() {
        csv.push_str(",is-novel");
    }
    csv.push('\n');
    for i in 0..x.rows() {
        let fake = probs
            .fake
            .as_ref()
            .map_or_else(String::new, |f| f[i].to_string());
        let _ = write!(csv, "{i},{},{fake}", argmax(probs.real.row(i)));
        for c in &columns {
            let _ = write!(csv, ",{}", c[i]);
        }
        if novel.is_some() {
            let _ = write!(csv, ",{}", i >= data.len());
        }
        csv.push('\n');
    }

    let dir = params.output_dir.clone().unwrap_or_else(default_output_dir);
    let mut out = RunOutputs::new(dir, "score", None, effective, inv.overrides.clone())?;
    out.input(&params.model)?;
    for src in std::iter::once(&params.data)
        .chain(&params.novel_data)
        .chain(&params.reference)
    {
        out.inputs(src.files())?;
    }
    out.write(SCORES_FILE, csv.as_bytes())?;
    log::info!("scored {} rows with {}", x.rows(), names.join(", "));
    out.finish()
}
