//! Novelty scores. Every score reads "higher means more novel".

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::{GridDensity, Sampler};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any ratio or log.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `p_fake / (1 - p_fake)` after clamping.
pub fn nd_gan_ratio(p_fake: f64) -> f64 {
    let p = clamp_prob(p_fake);
    p / (1.0 - p)
}

pub fn score_nd_gan(p_fake: &[f64]) -> Vec<f64> {
    p_fake.iter().map(|&p| nd_gan_ratio(p)).collect()
}

fn check_distribution(probs: &Tensor) -> Result<()> {
    if probs.ndim() != 2 || probs.cols() == 0 {
        return Err(Error::invalid(format!(
            "expected a batch of distributions, got shape {:?}",
            probs.shape()
        )));
    }
    for (i, row) in probs.row_iter().enumerate() {
        if let Some(j) = row.iter().position(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!(
                "row {i}, class {j}: probability {} is negative",
                row[j]
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Drops the last (fake) column of `K + 1` probabilities and renormalizes the rest.
pub fn renormalize_real(probs: &Tensor) -> Result<Tensor> {
    if probs.ndim() != 2 || probs.cols() < 2 {
        return Err(Error::invalid(format!(
            "need K + 1 >= 2 columns, got shape {:?}",
            probs.shape()
        )));
    }
    let k = probs.cols() - 1;
    let mut out = Vec::with_capacity(probs.rows() * k);
    for row in probs.row_iter() {
        let s: f64 = row[..k].iter().sum();
        if !(s > 0.0) {
            return Err(Error::invalid("real-class mass is zero"));
        }
        out.extend(row[..k].iter().map(|p| p / s));
    }
    Ok(Tensor::new([probs.rows(), k], out)?)
}

/// Shannon entropy (nats) of each row.
pub fn score_entropy(probs: &Tensor) -> Result<Vec<f64>> {
    check_distribution(probs)?;
    Ok(probs
        .row_iter()
        .map(|r| {
            // A constant row is the uniform maximum, `ln K`.
            if r.iter().all(|&p| p == r[0]) {
                return (r.len() as f64).ln();
            }
            let h = -r
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
            h.max(0.0)
        })
        .collect())
}

/// `1 - max_k p_k` for each row.
pub fn score_max_prob(probs: &Tensor) -> Result<Vec<f64>> {
    check_distribution(probs)?;
    Ok(probs
        .row_iter()
        .map(|r| 1.0 - r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest reference rows of `x` as `(distance, index)`, closest
/// first, ties broken by index. `skip` is left out of the search.
fn nearest(reference: &Tensor, x: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = reference
        .row_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (sq_dist(x, r), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(s, i)| (s.sqrt(), i)).collect()
}

fn mean_dist(n: &[(f64, usize)]) -> f64 {
    n.iter().map(|p| p.0).sum::<f64>() / n.len() as f64
}

/// Normalized kNN distance. With `a` the `k`-th nearest reference point of
/// `x`, the score is `d_k(x) / d_k(a)`, where `d_k` averages the distances to
/// the `k` nearest reference points (excluding `a` itself for the anchor).
///
/// A zero denominator yields 0 when the numerator is also 0, and otherwise
/// the largest finite score of the batch.
pub fn score_knn(queries: &Tensor, reference: &Tensor, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("kNN needs k >= 1"));
    }
    if reference.ndim() != 2 || reference.rows() < k + 1 {
        return Err(Error::InsufficientData(format!(
            "kNN with k = {k} needs at least {} reference points, got {}",
            k + 1,
            if reference.ndim() == 2 {
                reference.rows()
            } else {
                0
            }
        )));
    }
    if queries.ndim() != 2 || queries.cols() != reference.cols() {
        return Err(Error::invalid(format!(
            "query shape {:?} does not match reference width {}",
            queries.shape(),
            reference.cols()
        )));
    }
    let mut anchor_cache: HashMap<usize, f64> = HashMap::new();
    let mut scores = Vec::with_capacity(queries.rows());
    for q in queries.row_iter() {
        let nn = nearest(reference, q, k, None);
        let num = mean_dist(&nn);
        let anchor = nn[k - 1].1;
        let den = *anchor_cache.entry(anchor).or_insert_with(|| {
            mean_dist(&nearest(reference, reference.row(anchor), k, Some(anchor)))
        });
        scores.push(if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        });
    }
    let max_finite = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NAN, f64::max);
    let fill = if max_finite.is_nan() { 1.0 } else { max_finite };
    for s in &mut scores {
        if s.is_infinite() {
            *s = fill;
        }
    }
    Ok(scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    NdGan,
    FakeProb,
    Entropy,
    MaxProb,
    Knn(usize),
}

impl ScoreKind {
    pub fn needs_fake_class(self) -> bool {
        matches!(self, ScoreKind::NdGan | ScoreKind::FakeProb)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::NdGan => f.write_str("nd-gan"),
            ScoreKind::FakeProb => f.write_str("fake-prob"),
            ScoreKind::Entropy => f.write_str("entropy"),
            ScoreKind::MaxProb => f.write_str("max-prob"),
            ScoreKind::Knn(k) => write!(f, "knn{k}"),
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    /// Accepts `nd-gan`, `fake-prob`, `entropy`, `max-prob`, and `knn<k>` / `knn:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nd-gan" => ScoreKind::NdGan,
            "fake-prob" => ScoreKind::FakeProb,
            "entropy" => ScoreKind::Entropy,
            "max-prob" => ScoreKind::MaxProb,
            _ => {
                let k = s
                    .strip_prefix("knn")
                    .map(|r| r.trim_start_matches(':'))
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown score `{s}`")))?;
                ScoreKind::Knn(k)
            }
        })
    }
}

/// Class probabilities from a frozen model.
pub struct ClassProbs {
    /// `n x K` distribution over the real classes.
    pub real: Tensor,
    /// Fake-class probability per row, for models that have one.
    pub fake: Option<Vec<f64>>,
}

/// A frozen classifier that can feed the score functions.
pub trait ProbabilisticModel {
    fn class_probs(&self, x: &Tensor) -> Result<ClassProbs>;

    /// Last hidden-layer features, the space used by kNN.
    fn features(&self, x: &Tensor) -> Result<Tensor>;

    /// Fingerprint of the dataset the model was fitted on, when recorded.
    fn trained_on(&self) -> Option<&str>;
}

/// Anything that maps a batch to novelty scores.
pub trait NoveltyScorer {
    fn name(&self) -> &str;

    fn trained_on(&self) -> Option<&str> {
        None
    }

    fn score(&self, x: &Tensor) -> Result<Vec<f64>>;
}

pub struct ModelScorer<'a> {
    name: String,
    kind: ScoreKind,
    model: &'a dyn ProbabilisticModel,
    reference: Option<Tensor>,
}

impl<'a> ModelScorer<'a> {
    /// A probability-based scorer; use [`ModelScorer::knn`] for kNN.
    pub fn new(kind: ScoreKind, model: &'a dyn ProbabilisticModel) -> Result<Self> {
        if let ScoreKind::Knn(_) = kind {
            return Err(Error::invalid("kNN scoring needs a reference set"));
        }
        Ok(Self {
            name: kind.to_string(),
            kind,
            model,
            reference: None,
        })
    }

    /// kNN in the model's feature space against nominal `reference` inputs.
    pub fn knn(model: &'a dyn ProbabilisticModel, reference: &Tensor, k: usize) -> Result<Self> {
        let feats = model.features(reference)?;
        if feats.rows() < k + 1 {
            return Err(Error::InsufficientData(format!(
                "kNN with k = {k} needs at least {} reference points, got {}",
                k + 1,
                feats.rows()
            )));
        }
        Ok(Self {
            name: ScoreKind::Knn(k).to_string(),
            kind: ScoreKind::Knn(k),
            model,
            reference: Some(feats),
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }
}

impl NoveltyScorer for ModelScorer<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn trained_on(&self) -> Option<&str> {
        self.model.trained_on()
    }

    fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        if let ScoreKind::Knn(k) = self.kind {
            let feats = self.model.features(x)?;
            return score_knn(
                &feats,
                self.reference.as_ref().expect("knn has reference"),
                k,
            );
        }
        let probs = self.model.class_probs(x)?;
        let fake = || {
            probs.fake.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "score `{}` needs a model with a fake class",
                    self.kind
                ))
            })
        };
        match self.kind {
            ScoreKind::NdGan => Ok(score_nd_gan(fake()?)),
            ScoreKind::FakeProb => Ok(fake()?.iter().map(|&p| clamp_prob(p)).collect()),
            ScoreKind::Entropy => score_entropy(&probs.real),
            ScoreKind::MaxProb => score_max_prob(&probs.real),
            ScoreKind::Knn(_) => unreachable!(),
        }
    }
}

/// kNN on raw inputs, without a model.
pub struct RawKnnScorer {
    name: String,
    reference: Tensor,
    k: usize,
    trained_on: Option<String>,
}

impl RawKnnScorer {
    pub fn new(reference: Tensor, k: usize, trained_on: Option<String>) -> Result<Self> {
        if reference.ndim() != 2 || reference.rows() < k + 1 || k == 0 {
            return Err(Error::InsufficientData(format!(
                "kNN with k = {k} needs at least {} reference points",
                k + 1
            )));
        }
        Ok(Self {
            name: format!("raw-knn{k}"),
            reference,
            k,
            trained_on,
        })
    }
}

impl NoveltyScorer for RawKnnScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn trained_on(&self) -> Option<&str> {
        self.trained_on.as_deref()
    }

    fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        score_knn(x, &self.reference, self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoredExample {
    pub example_id: usize,
    pub score: f64,
    pub is_novel: Option<bool>,
}

pub fn scored_examples(scores: &[f64], is_novel: Option<&[bool]>) -> Result<Vec<ScoredExample>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score {i} is not finite")));
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &score)| ScoredExample {
            example_id: i,
            score,
            is_novel: is_novel.map(|n| n[i]),
        })
        .collect())
}

/// `example-id,score,is-novel` with `is-novel` as `1`, `0` or blank.
pub fn scores_csv(examples: &[ScoredExample]) -> String {
    let mut s = String::from("example-id,score,is-novel\n");
    for e in examples {
        let flag = match e.is_novel {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(s, "{},{},{}", e.example_id, e.score, flag);
    }
    s
}

/// Uniform draws over an axis-aligned box: the degenerate mixture generator.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformSampler {
    bounds: Vec<(f64, f64)>,
}

pub fn make_uniform_baseline_generator(bounds: Vec<(f64, f64)>) -> Result<UniformSampler> {
    if bounds.is_empty() {
        return Err(Error::invalid(
            "uniform sampler needs at least one dimension",
        ));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::invalid(format!(
                "dimension {d}: bounds [{lo}, {hi}] are not increasing and finite"
            )));
        }
    }
    Ok(UniformSampler { bounds })
}

impl UniformSampler {
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

impl Sampler for UniformSampler {
    fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let mut data = Vec::with_capacity(n * self.bounds.len());
        for _ in 0..n {
            for &(lo, hi) in &self.bounds {
                data.push(lo + (hi - lo) * rng.random::<f64>());
            }
        }
        Tensor::new([n, self.bounds.len()], data).expect("uniform sample shape")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlaggedCell {
    pub cell: usize,
    pub center: Vec<f64>,
    pub p_g: f64,
    pub p_data: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixtureReport {
    /// True when some cell has `p_g > p_data` by more than three standard
    /// errors while `p_data <= epsilon`.
    pub is_mixture: bool,
    pub flagged: Vec<FlaggedCell>,
    pub samples: usize,
    pub outside_grid: usize,
    pub epsilon: f64,
}

/// Histograms `samples` on the cells of `grid` (values of `p_data`) and
/// looks for generator mass in low-density cells beyond histogram noise.
pub fn check_mixture_generator(
    samples: &Tensor,
    grid: &GridDensity,
    epsilon: f64,
) -> Result<MixtureReport> {
    if samples.ndim() != 2 || samples.rows() == 0 {
        return Err(Error::InsufficientData("no generator samples".into()));
    }
    if samples.cols() != grid.dim() {
        return Err(Error::invalid(format!(
            "samples have {} columns, grid has {} dimensions",
            samples.cols(),
            grid.dim()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    let mut counts = vec![0usize; grid.len()];
    let mut outside = 0;
    for r in samples.row_iter() {
        match grid.locate(r) {
            Some(c) => counts[c] += 1,
            None => outside += 1,
        }
    }
    let n = samples.rows() as f64;
    let vol = grid.cell_volume();
    let mut flagged = Vec::new();
    for (c, &cnt) in counts.iter().enumerate() {
        let p_data = grid.values()[c];
        if cnt == 0 || p_data > epsilon {
            continue;
        }
        let q = cnt as f64 / n;
        let p_g = q / vol;
        let se = (q * (1.0 - q) / n).sqrt() / vol;
        if p_g - p_data > 3.0 * se {
            flagged.push(FlaggedCell {
                cell: c,
                center: grid.cell_center(c),
                p_g,
                p_data,
                std_error: se,
            });
        }
    }
    Ok(MixtureReport {
        is_mixture: !flagged.is_empty(),
        flagged,
        samples: samples.rows(),
        outside_grid: outside,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianMixtureDensity;
    use crate::rng::{RngStreams, Stream};

    fn col(xs: &[f64]) -> Tensor {
        Tensor::new([xs.len(), 1], xs.to_vec()).unwrap()
    }

    #[test]
    fn nd_gan_examples() {
        assert_eq!(nd_gan_ratio(0.5), 1.0);
        assert!((nd_gan_ratio(0.8) - 4.0).abs() < 1e-12);
        let z = nd_gan_ratio(0.0);
        assert!(z > 0.0 && (z - 1e-7).abs() < 1e-12);
        let sweep: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let s = score_nd_gan(&sweep);
        assert!(s[1..s.len() - 1].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn entropy_and_max_prob_examples() {
        let one_hot = Tensor::from_rows(&[[0.0, 1.0, 0.0]]);
        assert_eq!(score_entropy(&one_hot).unwrap(), vec![0.0]);
        assert_eq!(score_max_prob(&one_hot).unwrap(), vec![0.0]);
        let uni = Tensor::filled([1, 10], 0.1);
        assert!((score_entropy(&uni).unwrap()[0] - 10f64.ln()).abs() < 1e-12);
        assert!((score_max_prob(&uni).unwrap()[0] - 0.9).abs() < 1e-12);
        let half = Tensor::from_rows(&[[0.5, 0.5]]);
        assert!((score_entropy(&half).unwrap()[0] - 2f64.ln()).abs() < 1e-15);
        let p = Tensor::from_rows(&[[0.7, 0.2, 0.1]]);
        assert!((score_max_prob(&p).unwrap()[0] - 0.3).abs() < 1e-15);
        assert!(score_entropy(&Tensor::from_rows(&[[1.2, -0.2]])).is_err());
    }

    #[test]
    fn renormalize_drops_fake_column() {
        let p = Tensor::from_rows(&[[0.2, 0.2, 0.6]]);
        let r = renormalize_real(&p).unwrap();
        assert_eq!(r.data(), &[0.5, 0.5]);
    }

    #[test]
    fn knn_hand_traces() {
        let reference = col(&[0.0, 1.0, 10.0]);
        let s = score_knn(&col(&[2.0, 20.0, 10.0]), &reference, 1).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 10.0 / 9.0);
        assert_eq!(s[2], 0.0);
        assert!(score_knn(&col(&[2.0]), &reference, 3).is_err());
    }

    #[test]
    fn knn_zero_denominator() {
        let reference = col(&[0.0, 0.0, 5.0]);
        let s = score_knn(&col(&[1.0, 4.0]), &reference, 1).unwrap();
        // Query 1: anchor 0 has a duplicate, so the ratio is replaced by the batch max.
        assert_eq!(s[1], 1.0 / 5.0);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn score_kind_parsing() {
        for s in ["nd-gan", "fake-prob", "entropy", "max-prob", "knn5"] {
            assert_eq!(s.parse::<ScoreKind>().unwrap().to_string(), s);
        }
        assert_eq!("knn:3".parse::<ScoreKind>().unwrap(), ScoreKind::Knn(3));
        assert!("knn0".parse::<ScoreKind>().is_err());
        assert!("svm".parse::<ScoreKind>().is_err());
    }

    #[test]
    fn uniform_sampler_examples() {
        assert!(make_uniform_baseline_generator(vec![(1.0, 1.0)]).is_err());
        let u = make_uniform_baseline_generator(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mut rng = RngStreams::new(4).stream(Stream::Sampling);
        let x = u.sample(10_000, &mut rng);
        assert!(x.data().iter().all(|v| (0.0..1.0).contains(v)));
        let mean = x.row_iter().map(|r| r[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
        let y = u.sample(10_000, &mut RngStreams::new(4).stream(Stream::Sampling));
        assert_eq!(x, y);
    }

    #[test]
    fn mixture_check_examples() {
        let data = GaussianMixtureDensity::gaussian(vec![0.0, 0.0], vec![0.25, 0.25]).unwrap();
        let grid =
            GridDensity::from_density(&data, vec![(-3.0, 3.0), (-3.0, 3.0)], vec![12, 12]).unwrap();
        let eps = 0.01 * grid.max_value();
        let mut rng = RngStreams::new(8).stream(Stream::Sampling);
        let own = data.sample(10_000, &mut rng);
        assert!(
            !check_mixture_generator(&own, &grid, eps)
                .unwrap()
                .is_mixture
        );
        let u = make_uniform_baseline_generator(vec![(-3.0, 3.0), (-3.0, 3.0)]).unwrap();
        let uni = u.sample(10_000, &mut rng);
        assert!(
            check_mixture_generator(&uni, &grid, eps)
                .unwrap()
                .is_mixture
        );
        let mixed =
            Tensor::vstack(&[&data.sample(9_000, &mut rng), &u.sample(1_000, &mut rng)]).unwrap();
        assert!(
            check_mixture_generator(&mixed, &grid, eps)
                .unwrap()
                .is_mixture
        );
        assert!(check_mixture_generator(&Tensor::zeros([0, 2]), &grid, eps).is_err());
    }

    #[test]
    fn scores_csv_layout() {
        let ex = scored_examples(&[0.5, 2.0], Some(&[false, true])).unwrap();
        assert_eq!(
            scores_csv(&ex),
            "example-id,score,is-novel\n0,0.5,0\n1,2,1\n"
        );
        assert!(scored_examples(&[f64::NAN], None).is_err());
    }
}
