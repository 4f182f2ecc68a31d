//! ROC curves, AUROC, FPR thresholds, holdout-class splits and the
//! benchmark table.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::data::Dataset;
use crate::rng::{RngStreams, Stream};
use crate::scores::NoveltyScorer;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Point counts every score `>= threshold` as novel; `+inf` for the origin.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!(
            "score {i} is not finite ({})",
            scores[i]
        )));
    }
    Ok(())
}

/// Midrank (Mann-Whitney) AUROC: the fraction of (nominal, novel) pairs
/// ordered correctly, ties counting one half.
pub fn auroc(nominal: &[f64], novel: &[f64]) -> Result<f64> {
    if nominal.is_empty() || novel.is_empty() {
        return Err(Error::InsufficientData(format!(
            "AUROC needs both classes, got {} nominal and {} novel",
            nominal.len(),
            novel.len()
        )));
    }
    check_scores(nominal)?;
    check_scores(novel)?;
    let mut all: Vec<(f64, bool)> = nominal
        .iter()
        .map(|&s| (s, false))
        .chain(novel.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps midranks integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        rank2_sum += twice_mid * all[i..=j].iter().filter(|e| e.1).count() as u128;
        i = j + 1;
    }
    let (n0, n1) = (nominal.len() as u128, novel.len() as u128);
    let u2 = rank2_sum - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

/// ROC curve over every distinct threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(nominal: &[f64], novel: &[f64]) -> Result<RocCurve> {
    let auroc = auroc(nominal, novel)?;
    let mut all: Vec<(f64, bool)> = nominal
        .iter()
        .map(|&s| (s, false))
        .chain(novel.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n0, n1) = (nominal.len() as f64, novel.len() as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n0,
            tpr: tp as f64 / n1,
            threshold: t,
        });
    }
    Ok(RocCurve { points, auroc })
}

/// ROC from scores and per-example novelty flags.
pub fn roc_auroc(scores: &[f64], is_novel: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_novel.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            is_novel.len()
        )));
    }
    let (mut nominal, mut novel) = (Vec::new(), Vec::new());
    for (&s, &n) in scores.iter().zip(is_novel) {
        if n {
            novel.push(s);
        } else {
            nominal.push(s);
        }
    }
    roc_curve(&nominal, &novel)
}

/// Area under the piecewise-linear curve through `points`.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Smallest nominal score exceeded by at most `floor(n alpha)` nominal
/// scores. Flagging `score > threshold` then gives empirical FPR `<= alpha`.
pub fn threshold_at_fpr(nominal: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} outside (0, 1)")));
    }
    let n = nominal.len();
    if (n as f64) * alpha < 1.0 {
        return Err(Error::InsufficientData(format!(
            "{n} nominal scores cannot resolve FPR {alpha}"
        )));
    }
    check_scores(nominal)?;
    let mut sorted = nominal.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = ((n as f64) * alpha).floor() as usize;
    Ok(sorted[m.min(n - 1)])
}

/// Fraction of `novel` strictly above `threshold`.
pub fn tpr_at(novel: &[f64], threshold: f64) -> f64 {
    novel.iter().filter(|&&s| s > threshold).count() as f64 / novel.len() as f64
}

pub fn fpr_at(nominal: &[f64], threshold: f64) -> f64 {
    tpr_at(nominal, threshold)
}

/// One class held out of training and used as novelty at test time.
#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    pub holdout_class: usize,
    /// Training examples of the remaining classes, relabeled to `0..K-1`.
    pub train: Dataset,
    /// `class_map[new] = original` for the relabeled classes.
    pub class_map: Vec<usize>,
    pub eval_nominal: Dataset,
    pub eval_novel: Dataset,
}

impl HoldoutSplit {
    pub fn name(&self) -> String {
        format!("holdout-{}", self.holdout_class)
    }
}

fn shuffled(mut v: Vec<usize>, rng: &mut dyn rand::RngCore) -> Vec<usize> {
    v.shuffle(rng);
    v
}

/// Split for one holdout class. Novel examples come from the holdout
/// class's test pool first, then its train pool, each shuffled, until they
/// match the nominal count. If the holdout class is too small, the nominal
/// set is subsampled down to the novel count.
pub fn make_holdout_split(
    train: &Dataset,
    test: &Dataset,
    holdout: usize,
    seed: u64,
) -> Result<HoldoutSplit> {
    let k = train.num_classes();
    if test.num_classes() != k || train.dim() != test.dim() {
        return Err(Error::invalid(
            "train and test sets disagree on classes or dimension",
        ));
    }
    if holdout >= k {
        return Err(Error::LabelOutOfRange {
            label: holdout,
            num_classes: k,
        });
    }
    let tr = train.class_indices()?;
    let te = test.class_indices()?;
    for c in 0..k {
        if tr[c].is_empty() || te[c].is_empty() {
            return Err(Error::InsufficientData(format!(
                "class {c} needs both train and test examples ({} / {})",
                tr[c].len(),
                te[c].len()
            )));
        }
    }
    let mut rng = RngStreams::new(seed)
        .derive(holdout as u64)
        .stream(Stream::Shuffling);

    let class_map: Vec<usize> = (0..k).filter(|&c| c != holdout).collect();
    let mut remap = vec![usize::MAX; k];
    for (new, &old) in class_map.iter().enumerate() {
        remap[old] = new;
    }
    let train_idx: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels().expect("checked")[i] != holdout)
        .collect();
    let train_sub = relabel(&train.select(&train_idx), &remap, k - 1)?;

    let mut nominal_idx: Vec<usize> = (0..test.len())
        .filter(|&i| test.labels().expect("checked")[i] != holdout)
        .collect();
    let test_pool = shuffled(te[holdout].clone(), &mut rng);
    let train_pool = shuffled(tr[holdout].clone(), &mut rng);
    let available = test_pool.len() + train_pool.len();
    if available < nominal_idx.len() {
        nominal_idx = shuffled(nominal_idx, &mut rng);
        nominal_idx.truncate(available);
        nominal_idx.sort_unstable();
    }
    let want = nominal_idx.len();
    let from_test = want.min(test_pool.len());
    let from_train = want - from_test;

    let nominal = relabel(&test.select(&nominal_idx), &remap, k - 1)?;
    let novel_test = test.select(&test_pool[..from_test]);
    let novel_train = train.select(&train_pool[..from_train]);
    let novel_features = Tensor::vstack(&[novel_test.features(), novel_train.features()])?;
    let novel = Dataset::new(
        novel_features,
        None,
        k - 1,
        test.split,
        format!(
            "holdout {holdout} of {} / {}",
            test.provenance, train.provenance
        ),
    )?;
    Ok(HoldoutSplit {
        holdout_class: holdout,
        train: train_sub,
        class_map,
        eval_nominal: nominal,
        eval_novel: novel,
    })
}

fn relabel(ds: &Dataset, remap: &[usize], k: usize) -> Result<Dataset> {
    let labels = ds.labels().map(|l| l.iter().map(|&v| remap[v]).collect());
    Dataset::new(
        ds.features().clone(),
        labels,
        k,
        ds.split,
        ds.provenance.clone(),
    )
}

/// One [`HoldoutSplit`] per class.
pub fn make_holdout_splits(
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<Vec<HoldoutSplit>> {
    (0..train.num_classes())
        .map(|c| make_holdout_split(train, test, c, seed))
        .collect()
}

/// Scorers to evaluate on one pair of nominal / novel sets.
pub struct BenchmarkCase<'a> {
    pub split: String,
    /// Fingerprint of the training set every scorer must have been fitted on.
    pub train_fingerprint: String,
    pub nominal: &'a Tensor,
    pub novel: &'a Tensor,
    pub scorers: Vec<&'a dyn NoveltyScorer>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub scorer: String,
    pub split: String,
    pub auroc: f64,
    #[serde(rename = "tpr@fpr0.05")]
    pub tpr_at_fpr_005: Option<f64>,
    #[serde(rename = "tpr@fpr0.10")]
    pub tpr_at_fpr_010: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocRecord {
    pub scorer: String,
    pub split: String,
    pub curve: RocCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    /// Per-split rows followed by one `mean` row per scorer.
    pub rows: Vec<MetricRow>,
    #[serde(skip)]
    pub rocs: Vec<RocRecord>,
}

pub const MEAN_SPLIT: &str = "mean";

fn tpr_at_fpr(nominal: &[f64], novel: &[f64], alpha: f64) -> Option<f64> {
    threshold_at_fpr(nominal, alpha)
        .ok()
        .map(|t| tpr_at(novel, t))
}

pub fn run_benchmark(cases: &[BenchmarkCase<'_>]) -> Result<BenchmarkReport> {
    let mut rows = Vec::new();
    let mut rocs = Vec::new();
    let mut order: Vec<String> = Vec::new();
    for case in cases {
        for scorer in &case.scorers {
            if let Some(fp) = scorer.trained_on() {
                if fp != case.train_fingerprint {
                    return Err(Error::FingerprintMismatch {
                        scorer: scorer.name().to_string(),
                        expected: case.train_fingerprint.clone(),
                        actual: fp.to_string(),
                    });
                }
            }
            let nominal = scorer.score(case.nominal)?;
            let novel = scorer.score(case.novel)?;
            let curve = roc_curve(&nominal, &novel)?;
            rows.push(MetricRow {
                scorer: scorer.name().to_string(),
                split: case.split.clone(),
                auroc: curve.auroc,
                tpr_at_fpr_005: tpr_at_fpr(&nominal, &novel, 0.05),
                tpr_at_fpr_010: tpr_at_fpr(&nominal, &novel, 0.10),
            });
            if !order.iter().any(|n| n == scorer.name()) {
                order.push(scorer.name().to_string());
            }
            rocs.push(RocRecord {
                scorer: scorer.name().to_string(),
                split: case.split.clone(),
                curve,
            });
        }
    }
    let mean_of = |xs: Vec<Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = xs.into_iter().collect();
        v.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    for name in order {
        let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.scorer == name).collect();
        let mean = MetricRow {
            scorer: name.clone(),
            split: MEAN_SPLIT.into(),
            auroc: mine.iter().map(|r| r.auroc).sum::<f64>() / mine.len() as f64,
            tpr_at_fpr_005: mean_of(mine.iter().map(|r| r.tpr_at_fpr_005).collect()),
            tpr_at_fpr_010: mean_of(mine.iter().map(|r| r.tpr_at_fpr_010).collect()),
        };
        rows.push(mean);
    }
    Ok(BenchmarkReport { rows, rocs })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl BenchmarkReport {
    pub fn row(&self, scorer: &str, split: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.scorer == scorer && r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scorer,split,auroc,tpr@fpr0.05,tpr@fpr0.10\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.scorer,
                r.split,
                r.auroc,
                opt(r.tpr_at_fpr_005),
                opt(r.tpr_at_fpr_010)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("metric rows serialize")
    }

    /// Every ROC point, tagged with scorer and split.
    pub fn roc_csv(&self) -> String {
        let mut s = String::from("scorer,split,fpr,tpr,threshold\n");
        for rec in &self.rocs {
            for p in &rec.curve.points {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    rec.scorer, rec.split, p.fpr, p.tpr, p.threshold
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        // One of four (nominal, novel) pairs has the novel score on top.
        assert_eq!(auroc(&[0.2, 0.9], &[0.1, 0.8]).unwrap(), 0.25);
        assert_eq!(auroc(&[0.1, 0.8], &[0.2, 0.9]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.4; 5], &[0.4; 3]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn curve_endpoints_and_area() {
        let c = roc_curve(&[0.2, 0.9, 0.5, 0.5], &[0.1, 0.8, 0.5]).unwrap();
        let first = c.points[0];
        let last = *c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!((trapezoid_area(&c.points) - c.auroc).abs() < 1e-12);
        assert!(c.points.windows(2).all(|w| w[1].threshold < w[0].threshold));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_at_fpr(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(), 3.0);
        let sym = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(threshold_at_fpr(&sym, 0.5).unwrap(), 3.0);
        assert!(threshold_at_fpr(&[1.0, 2.0], 0.25).is_err());
        let scores: Vec<f64> = (0..37).map(|i| ((i * 7919) % 37) as f64).collect();
        for alpha in [0.05, 0.1, 0.3, 0.5] {
            let t = threshold_at_fpr(&scores, alpha).unwrap();
            assert!(fpr_at(&scores, t) <= alpha);
        }
    }

    fn labeled(per_class: &[usize], split: SplitTag) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                rows.push(vec![c as f64, i as f64]);
                labels.push(c);
            }
        }
        Dataset::new(
            Tensor::from_rows(&rows),
            Some(labels),
            per_class.len(),
            split,
            "synthetic",
        )
        .unwrap()
    }

    #[test]
    fn holdout_counts_follow_protocol() {
        let train = labeled(&[1000; 10], SplitTag::Train);
        let test = labeled(&[100; 10], SplitTag::Test);
        let splits = make_holdout_splits(&train, &test, 7).unwrap();
        assert_eq!(splits.len(), 10);
        let s = &splits[4];
        assert_eq!(s.eval_nominal.len(), 900);
        assert_eq!(s.eval_novel.len(), 900);
        assert!(s.train.features().row_iter().all(|r| r[0] != 4.0));
        assert!(s.eval_novel.features().row_iter().all(|r| r[0] == 4.0));
        assert_eq!(s.train.num_classes(), 9);
        assert_eq!(s.class_map[4], 5);
        let again = make_holdout_split(&train, &test, 4, 7).unwrap();
        assert_eq!(again.eval_novel, s.eval_novel);
    }

    #[test]
    fn small_holdout_class_shrinks_nominal() {
        let train = labeled(&[50, 3], SplitTag::Train);
        let test = labeled(&[40, 2], SplitTag::Test);
        let s = make_holdout_split(&train, &test, 1, 1).unwrap();
        assert_eq!(s.eval_novel.len(), 5);
        assert_eq!(s.eval_nominal.len(), 5);
        let missing = labeled(&[40, 0], SplitTag::Test);
        assert!(make_holdout_split(
            &train,
            &Dataset::new(
                missing.features().clone(),
                missing.labels().map(<[usize]>::to_vec),
                2,
                SplitTag::Test,
                "m"
            )
            .unwrap(),
            1,
            1
        )
        .is_err());
    }
}
