//! `eval`: AUROC and TPR at fixed FPR, either from a scores file or by
//! running the holdout-class protocol end to end.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ndgan_core::gan::file::{encode, ModelFile};
use ndgan_core::gan::{train_classifier, train_gan, Classifier, GanModel};
use ndgan_core::metrics::{
    make_holdout_split, roc_curve, run_benchmark, threshold_at_fpr, tpr_at, BenchmarkCase,
};
use ndgan_core::rng::RngStreams;
use ndgan_core::scores::{ModelScorer, NoveltyScorer, ScoreKind};

use super::Invocation;
use crate::config::{default_output_dir, seeds, ExperimentConfig, Protocol};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, RunOutputs};

/// Reference AUROC on MNIST with one digit held out.
pub const REFERENCE_ND_GAN_HOLDOUT: [f64; 10] = [
    0.992, 0.982, 0.966, 0.976, 0.936, 0.989, 0.947, 0.978, 0.976, 0.967,
];
pub const REFERENCE_MEANS: [(&str, f64); 4] = [
    ("nd-gan", 0.971),
    ("entropy", 0.964),
    ("max-prob", 0.963),
    ("knn5", 0.924),
];

pub fn reference_json() -> Value {
    json!({
        "dataset": "mnist, one digit held out",
        "metric": "auroc",
        "nd-gan-per-holdout": REFERENCE_ND_GAN_HOLDOUT,
        "mean": REFERENCE_MEANS.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
    })
}

pub fn reference_comment() -> String {
    let per: Vec<String> = REFERENCE_ND_GAN_HOLDOUT
        .iter()
        .enumerate()
        .map(|(h, v)| format!("{h}:{v}"))
        .collect();
    let means: Vec<String> = REFERENCE_MEANS
        .iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    format!(
        "# reference mnist holdout auroc: nd-gan per holdout {}; mean {}\n",
        per.join(" "),
        means.join(", ")
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    /// Output of `score` with an `is-novel` column.
    pub scores: PathBuf,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.1]
}

const NON_SCORE_COLUMNS: [&str; 3] = ["example-id", "predicted-class", "is-novel"];

struct ScoreTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    is_novel: Vec<bool>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn read_scores(path: &std::path::Path) -> CliResult<ScoreTable> {
    let text = crate::io::read_text(path)?;
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let truth = header
        .iter()
        .position(|h| h == "is-novel")
        .ok_or_else(|| bad("no `is-novel` column".into()))?;
    let score_cols: Vec<usize> = (0..header.len())
        .filter(|&j| !NON_SCORE_COLUMNS.contains(&header[j].as_str()))
        .collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); score_cols.len()];
    let mut is_novel = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        is_novel.push(
            parse_bool(&rec[truth])
                .ok_or_else(|| bad(format!("line {line}: is-novel `{}`", &rec[truth])))?,
        );
        for (c, &j) in score_cols.iter().enumerate() {
            let cell = rec[j].trim();
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    bad(format!(
                        "line {line}, column `{}`: `{cell}` is not a number",
                        header[j]
                    ))
                })?)
            };
            columns[c].push(v);
        }
    }
    let mut names = Vec::new();
    let mut out = Vec::new();
    for (c, &j) in score_cols.iter().enumerate() {
        if columns[c].iter().all(Option::is_none) {
            continue;
        }
        let col: Option<Vec<f64>> = columns[c].iter().copied().collect();
        let col = col.ok_or_else(|| bad(format!("column `{}` has empty cells", header[j])))?;
        names.push(header[j].clone());
        out.push(col);
    }
    if names.is_empty() {
        return Err(bad("no score columns".into()));
    }
    Ok(ScoreTable {
        names,
        columns: out,
        is_novel,
    })
}

fn alpha_key(a: f64) -> String {
    format!("{a}")
}

fn run_plain(inv: &Invocation) -> CliResult<Manifest> {
    let (params, effective): (EvalParams, _) = inv.resolve("eval")?;
    for &a in &params.alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::validation(format!("alpha {a} outside (0, 1)")));
        }
    }
    let table = read_scores(&params.scores)?;
    let novel_count = table.is_novel.iter().filter(|&&b| b).count();
    if novel_count == 0 || novel_count == table.is_novel.len() {
        return Err(CliError::validation(format!(
            "{}: ground truth has a single class ({novel_count} novel of {} rows)",
            params.scores.display(),
            table.is_novel.len()
        )));
    }

    let mut rows = Vec::new();
    let mut csv = reference_comment();
    csv.push_str("scorer,auroc");
    for &a in &params.alphas {
        let _ = write!(csv, ",tpr@fpr{}", alpha_key(a));
    }
    csv.push('\n');
    let mut roc = String::from("scorer,fpr,tpr,threshold\n");
    for (name, col) in table.names.iter().zip(&table.columns) {
        let (mut nominal, mut novel) = (Vec::new(), Vec::new());
        for (&v, &n) in col.iter().zip(&table.is_novel) {
            if n {
                novel.push(v)
            } else {
                nominal.push(v)
            }
        }
        let curve = roc_curve(&nominal, &novel)?;
        let mut tprs = serde_json::Map::new();
        let _ = write!(csv, "{name},{}", curve.auroc);
        for &a in &params.alphas {
            let tpr = threshold_at_fpr(&nominal, a)
                .ok()
                .map(|t| tpr_at(&novel, t));
            let _ = write!(csv, ",{}", tpr.map_or_else(String::new, |v| v.to_string()));
            tprs.insert(alpha_key(a), json!(tpr));
        }
        csv.push('\n');
        for p in &curve.points {
            let _ = writeln!(roc, "{name},{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        log::info!("{name}: auroc {:.4}", curve.auroc);
        rows.push(json!({"scorer": name, "auroc": curve.auroc, "tpr_at_fpr": tprs}));
    }
    let metrics = json!({"rows": rows, "reference": reference_json()});

    let dir = params.output_dir.clone().unwrap_or_else(default_output_dir);
    let mut out = RunOutputs::new(dir, "eval", None, effective, inv.overrides.clone())?;
    out.input(&params.scores)?;
    out.write(
        "metrics.json",
        serde_json::to_string_pretty(&metrics)
            .expect("json")
            .as_bytes(),
    )?;
    out.write("metrics.csv", csv.as_bytes())?;
    out.write("roc.csv", roc.as_bytes())?;
    out.finish()
}

/// Seed for split `h` and `purpose`, derived from the master seed.
fn split_seed(master: u64, h: usize, purpose: u64) -> u64 {
    RngStreams::new(master)
        .derive(1000 * purpose + h as u64)
        .seed()
}

fn run_holdout(inv: &Invocation) -> CliResult<Manifest> {
    let (cfg, effective): (ExperimentConfig, _) = inv.resolve("eval")?;
    cfg.validate()?;
    let kinds = if cfg.scorers.is_empty() {
        vec![ScoreKind::NdGan]
    } else {
        cfg.score_kinds()?
    };
    let train = cfg.load_dataset(false)?;
    let test = cfg.load_dataset(true)?;
    if train.labels().is_none() || test.labels().is_none() {
        return Err(CliError::validation(
            "the holdout protocol needs labeled train and test sets",
        ));
    }
    let k = train.num_classes();
    let holdouts = cfg
        .evaluation
        .holdout_classes
        .clone()
        .unwrap_or_else(|| (0..k).collect());
    if let Some(&bad) = holdouts.iter().find(|&&h| h >= k) {
        return Err(CliError::validation(format!(
            "holdout class {bad} but the data has {k} classes"
        )));
    }
    if cfg.evaluation.alphas != default_alphas() {
        log::warn!("the holdout protocol reports TPR at FPR 0.05 and 0.10 only");
    }
    let arch = cfg.architecture.resolve(train.dim(), k - 1)?;
    let needs_classifier = kinds.iter().any(|k| !k.needs_fake_class());

    let mut out = RunOutputs::new(
        cfg.resolve_output_dir(),
        "eval",
        Some(cfg.seed),
        effective,
        inv.overrides.clone(),
    )?;
    for src in cfg.dataset.iter().chain(&cfg.test_dataset) {
        out.inputs(src.files())?;
    }

    let split_base = cfg.derived_seed(seeds::SPLITS);
    let mut splits = Vec::new();
    let mut gans = Vec::new();
    let mut classifiers = Vec::new();
    for &h in &holdouts {
        let start = Instant::now();
        let split = make_holdout_split(&train, &test, h, split_base)?;
        let mut tc = cfg.train_config();
        tc.seed = split_seed(cfg.seed, h, seeds::TRAIN_DATA);
        log::info!(
            "{}: {} train rows, {} nominal / {} novel eval rows",
            split.name(),
            split.train.len(),
            split.eval_nominal.len(),
            split.eval_novel.len()
        );
        let (gan, _) = train_gan(
            GanModel::new(&arch, split_seed(cfg.seed, h, seeds::MODEL_INIT))?,
            &split.train,
            &tc,
        )?;
        out.write(
            &format!("models/{}-gan.ndgan", split.name()),
            &encode(&ModelFile::Gan(gan.clone())),
        )?;
        let clf = if needs_classifier {
            let c = train_classifier(
                Classifier::new(&arch, split_seed(cfg.seed, h, seeds::CLASSIFIER_INIT))?,
                &split.train,
                &tc,
            )?;
            out.write(
                &format!("models/{}-classifier.ndgan", split.name()),
                &encode(&ModelFile::Classifier(c.clone())),
            )?;
            Some(c)
        } else {
            None
        };
        log::info!(
            "{}: trained in {:.1} s",
            split.name(),
            start.elapsed().as_secs_f64()
        );
        splits.push(split);
        gans.push(gan);
        classifiers.push(clf);
    }

    let mut owned: Vec<Vec<ModelScorer<'_>>> = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let mut v = Vec::new();
        for &kind in &kinds {
            let scorer = match kind {
                ScoreKind::NdGan | ScoreKind::FakeProb => ModelScorer::new(kind, &gans[i])?,
                ScoreKind::Knn(n) => ModelScorer::knn(
                    classifiers[i].as_ref().expect("trained"),
                    split.train.features(),
                    n,
                )?,
                _ => ModelScorer::new(kind, classifiers[i].as_ref().expect("trained"))?,
            };
            v.push(scorer);
        }
        owned.push(v);
    }
    let cases: Vec<BenchmarkCase<'_>> = splits
        .iter()
        .zip(&owned)
        .map(|(split, scorers)| BenchmarkCase {
            split: split.name(),
            train_fingerprint: split.train.fingerprint(),
            nominal: split.eval_nominal.features(),
            novel: split.eval_novel.features(),
            scorers: scorers.iter().map(|s| s as &dyn NoveltyScorer).collect(),
        })
        .collect();
    let report = run_benchmark(&cases)?;
    for r in report
        .rows
        .iter()
        .filter(|r| r.split == ndgan_core::metrics::MEAN_SPLIT)
    {
        log::info!("{} mean auroc {:.4}", r.scorer, r.auroc);
    }
    let metrics = json!({"rows": report.rows, "reference": reference_json()});
    out.write(
        "metrics.json",
        serde_json::to_string_pretty(&metrics)
            .expect("json")
            .as_bytes(),
    )?;
    out.write(
        "metrics.csv",
        format!("{}{}", reference_comment(), report.to_csv()).as_bytes(),
    )?;
    out.write("roc.csv", report.roc_csv().as_bytes())?;
    out.finish()
}

pub fn run(inv: &Invocation) -> CliResult<Manifest> {
    let base = inv.base_value("eval")?;
    if base.get("scores").is_some() {
        return run_plain(inv);
    }
    let (cfg, _): (ExperimentConfig, _) = inv.resolve("eval")?;
    match cfg.evaluation.protocol {
        Protocol::Holdout => run_holdout(inv),
        Protocol::Plain => Err(CliError::validation(
            "plain evaluation reads a scores file (--scores); set evaluation.protocol = \"holdout\" to train and evaluate",
        )),
    }
}
