//! Known densities and the optimal detectors built from them.
//!
//! These are the yardsticks for the learned detectors: the likelihood-ratio
//! test `p_novel / p_data`, the optimal discriminator
//! `D*(x) = p_data / (p_data + p_g)` for a fixed generator density `p_g`, and
//! the identity linking the two when `p_g = pi p_novel + (1 - pi) p_data`.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::metrics::threshold_at_fpr;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Densities are floored here before they are used as a denominator.
pub const DENSITY_FLOOR: f64 = 1e-300;

pub trait Density {
    fn dim(&self) -> usize;

    fn pdf(&self, x: &[f64]) -> f64;

    fn eval_batch(&self, x: &Tensor) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        Ok(x.row_iter().map(|r| self.pdf(r)).collect())
    }
}

/// Anything that can draw a batch of points.
pub trait Sampler {
    fn dim(&self) -> usize;

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor;
}

fn check_dim(dim: usize, x: &Tensor) -> Result<()> {
    if x.ndim() != 2 || x.cols() != dim {
        return Err(Error::invalid(format!(
            "density of dimension {dim} evaluated on batch of shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Mixture of axis-aligned Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureDensity {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixtureDensity {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self {
            weights,
            means,
            variances,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// Equal-weight mixture with a shared isotropic variance.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let k = means.len();
        let dim = means.first().map_or(0, Vec::len);
        Self::new(vec![1.0 / k as f64; k], means, vec![vec![variance; dim]; k])
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::invalid(format!(
                "mixture needs matching non-empty weights/means/variances, got {}/{}/{}",
                k,
                self.means.len(),
                self.variances.len()
            )));
        }
        let dim = self.means[0].len();
        if dim == 0 {
            return Err(Error::invalid(
                "mixture components need at least one dimension",
            ));
        }
        if self
            .means
            .iter()
            .chain(&self.variances)
            .any(|v| v.len() != dim)
        {
            return Err(Error::invalid("component dimensions disagree"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::invalid(
                "variances must be finite and strictly positive",
            ));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .filter(|&c| self.weights[c] > 0.0)
            .map(|c| {
                let mut acc = self.weights[c].ln();
                for ((xi, mi), vi) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                    let d = xi - mi;
                    acc -= 0.5 * (d * d / vi + (2.0 * PI * vi).ln());
                }
                acc
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Exact mixture density at each row of `x`.
    pub fn density_eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.eval_batch(x)
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let dim = self.dim();
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let c = pick_component(&self.weights, rng);
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(rng);
                data.push(self.means[c][d] + self.variances[c][d].sqrt() * e);
            }
        }
        Tensor::new([n, dim], data).expect("sample shape")
    }
}

fn pick_component(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

impl Sampler for GaussianMixtureDensity {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        GaussianMixtureDensity::sample(self, n, rng)
    }
}

impl Density for GaussianMixtureDensity {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// `pi * p_novel + (1 - pi) * p_data`: the density of a mixture generator
/// whose "other" component is the novel distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pi: f64,
    novel: GaussianMixtureDensity,
    data: GaussianMixtureDensity,
}

impl MixtureSpec {
    pub fn new(
        pi: f64,
        novel: GaussianMixtureDensity,
        data: GaussianMixtureDensity,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::invalid(format!("pi = {pi} outside [0, 1]")));
        }
        if novel.dim() != data.dim() {
            return Err(Error::invalid(format!(
                "novel density has dimension {}, data density {}",
                novel.dim(),
                data.dim()
            )));
        }
        Ok(Self { pi, novel, data })
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn novel(&self) -> &GaussianMixtureDensity {
        &self.novel
    }

    pub fn data(&self) -> &GaussianMixtureDensity {
        &self.data
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let dim = self.dim();
        let mut rows = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let from_novel = rng.random::<f64>() < self.pi;
            let src = if from_novel { &self.novel } else { &self.data };
            rows.extend_from_slice(src.sample(1, rng).data());
        }
        Tensor::new([n, dim], rows).expect("sample shape")
    }
}

impl Sampler for MixtureSpec {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        MixtureSpec::sample(self, n, rng)
    }
}

impl Density for MixtureSpec {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.pi * self.novel.pdf(x) + (1.0 - self.pi) * self.data.pdf(x)
    }
}

/// Density values on a regular 1D or 2D grid of cells, evaluated at cell midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    bounds: Vec<(f64, f64)>,
    resolution: Vec<usize>,
    values: Vec<f64>,
}

pub const DEFAULT_GRID_RESOLUTION: usize = 200;

impl GridDensity {
    pub fn from_density(
        density: &dyn Density,
        bounds: Vec<(f64, f64)>,
        resolution: Vec<usize>,
    ) -> Result<Self> {
        let mut g = Self {
            bounds,
            resolution,
            values: Vec::new(),
        };
        g.check()?;
        if g.dim() != density.dim() {
            return Err(Error::invalid(format!(
                "grid of dimension {} for density of dimension {}",
                g.dim(),
                density.dim()
            )));
        }
        g.values = (0..g.len())
            .map(|i| density.pdf(&g.cell_center(i)))
            .collect();
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        if self.bounds.is_empty()
            || self.bounds.len() > 2
            || self.bounds.len() != self.resolution.len()
        {
            return Err(Error::invalid("grids support one or two dimensions"));
        }
        for (&(lo, hi), &r) in self.bounds.iter().zip(&self.resolution) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || r == 0 {
                return Err(Error::invalid(format!("bad grid axis [{lo}, {hi}] x {r}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_widths(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.resolution)
            .map(|(&(lo, hi), &r)| (hi - lo) / r as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_widths().iter().product()
    }

    /// Midpoint-rule integral of the cell values.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn normalized(mut self) -> Self {
        let mass = self.total_mass();
        if mass > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= mass);
        }
        self
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Cell index along each axis; the first axis varies slowest.
    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut rem = flat;
        for d in (0..self.dim()).rev() {
            idx[d] = rem % self.resolution[d];
            rem /= self.resolution[d];
        }
        idx
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let widths = self.cell_widths();
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.bounds[d].0 + (i as f64 + 0.5) * widths[d])
            .collect()
    }

    /// All cell centers as a `len x dim` matrix.
    pub fn centers(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.dim());
        for i in 0..self.len() {
            data.extend(self.cell_center(i));
        }
        Tensor::new([self.len(), self.dim()], data).expect("grid centers")
    }

    /// Flat index of the cell containing `x`, if inside the grid.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let widths = self.cell_widths();
        let mut flat = 0;
        for d in 0..self.dim() {
            let (lo, hi) = self.bounds[d];
            if !(x[d] >= lo && x[d] < hi) {
                return None;
            }
            let i = (((x[d] - lo) / widths[d]) as usize).min(self.resolution[d] - 1);
            flat = flat * self.resolution[d] + i;
        }
        Some(flat)
    }
}

/// Neyman-Pearson statistic `p_novel / p_data`; higher means more novel.
pub fn likelihood_ratio_score(
    p_data: &dyn Density,
    p_novel: &dyn Density,
    x: &Tensor,
) -> Result<Vec<f64>> {
    let pd = p_data.eval_batch(x)?;
    let pn = p_novel.eval_batch(x)?;
    pd.iter()
        .zip(&pn)
        .enumerate()
        .map(|(i, (&d, &n))| {
            if d < DENSITY_FLOOR && n < DENSITY_FLOOR {
                return Err(Error::UndefinedRatio { index: i });
            }
            Ok(n / d.max(DENSITY_FLOOR))
        })
        .collect()
}

/// Optimal discriminator for a fixed generator density.
pub fn optimal_discriminator(
    p_data: &dyn Density,
    p_g: &dyn Density,
    x: &Tensor,
) -> Result<Vec<f64>> {
    let pd = p_data.eval_batch(x)?;
    let pg = p_g.eval_batch(x)?;
    pd.iter()
        .zip(&pg)
        .enumerate()
        .map(|(i, (&d, &g))| {
            if d + g <= 0.0 {
                return Err(Error::UndefinedRatio { index: i });
            }
            Ok(d / (d + g))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub evaluated: usize,
    /// Points skipped because `p_data` vanished there.
    pub excluded: Vec<usize>,
    /// Largest `|(1 - D*)/D* - (pi p_novel / p_data + 1 - pi)|`.
    pub max_abs_residual: f64,
    /// The same difference divided by `max(1, |rhs|)`.
    pub max_scaled_residual: f64,
    /// Scaled residual of the semi-supervised form:
    /// `(pi p_novel + (1 - pi) p_data) / p_data` against the same right side.
    pub max_scaled_residual_ssnd: f64,
}

impl IdentityReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_scaled_residual < tol && self.max_scaled_residual_ssnd < tol
    }
}

/// Evaluates both sides of the optimal-discriminator / likelihood-ratio
/// identity for `p_g = spec` at every row of `x`.
pub fn verify_mixture_identity(spec: &MixtureSpec, x: &Tensor) -> Result<IdentityReport> {
    let pd = spec.data.eval_batch(x)?;
    let pn = spec.novel.eval_batch(x)?;
    let pi = spec.pi;
    let mut report = IdentityReport {
        evaluated: 0,
        excluded: Vec::new(),
        max_abs_residual: 0.0,
        max_scaled_residual: 0.0,
        max_scaled_residual_ssnd: 0.0,
    };
    for (i, (&d, &n)) in pd.iter().zip(&pn).enumerate() {
        if d < DENSITY_FLOOR {
            report.excluded.push(i);
            continue;
        }
        let pg = pi * n + (1.0 - pi) * d;
        let dstar = d / (d + pg);
        let lhs = (1.0 - dstar) / dstar;
        let rhs = pi * n / d + (1.0 - pi);
        let ssnd = pg / d;
        let scale = rhs.abs().max(1.0);
        let abs = (lhs - rhs).abs();
        report.evaluated += 1;
        report.max_abs_residual = report.max_abs_residual.max(abs);
        report.max_scaled_residual = report.max_scaled_residual.max(abs / scale);
        report.max_scaled_residual_ssnd = report
            .max_scaled_residual_ssnd
            .max((ssnd - rhs).abs() / scale);
    }
    Ok(report)
}

/// Threshold on the likelihood ratio giving empirical FPR at most `alpha`
/// on `nominal` (rule: `score > threshold` flags novelty).
pub fn np_threshold_for_fpr(
    p_data: &dyn Density,
    p_novel: &dyn Density,
    alpha: f64,
    nominal: &Tensor,
) -> Result<f64> {
    let scores = likelihood_ratio_score(p_data, p_novel, nominal)?;
    threshold_at_fpr(&scores, alpha)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form AUROC of the likelihood-ratio detector when both densities
/// are single Gaussians with the same diagonal covariance: `Phi(delta / sqrt 2)`
/// with `delta` the Mahalanobis distance between the means.
pub fn closed_form_lr_auroc(
    p_data: &GaussianMixtureDensity,
    p_novel: &GaussianMixtureDensity,
) -> Option<f64> {
    if p_data.components() != 1
        || p_novel.components() != 1
        || p_data.variances != p_novel.variances
    {
        return None;
    }
    let delta2: f64 = p_data.means[0]
        .iter()
        .zip(&p_novel.means[0])
        .zip(&p_data.variances[0])
        .map(|((a, b), v)| (a - b) * (a - b) / v)
        .sum();
    Some(normal_cdf(delta2.sqrt() / std::f64::consts::SQRT_2))
}

pub const DENSITY_SCHEMA_VERSION: u32 = 1;

/// On-disk description of a density experiment:
///
/// ```json
/// {
///   "version": 1,
///   "data":  { "weights": [1.0], "means": [[0.0]], "variances": [[1.0]] },
///   "novel": { "weights": [1.0], "means": [[2.0]], "variances": [[1.0]] },
///   "pi": 0.5,
///   "bounds": [[-6.0, 8.0]]
/// }
/// ```
///
/// `novel`, `pi` (default 0) and `bounds` are optional; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityDocument {
    pub version: u32,
    pub data: GaussianMixtureDensity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel: Option<GaussianMixtureDensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl DensityDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: DensityDocument =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("density document serializes")
    }

    fn validate(&self) -> Result<()> {
        let schema = |path: &str, e: Error| Error::Schema {
            path: path.to_string(),
            message: e.to_string(),
        };
        if self.version != DENSITY_SCHEMA_VERSION {
            return Err(Error::Schema {
                path: "version".into(),
                message: format!(
                    "unsupported version {}, expected {DENSITY_SCHEMA_VERSION}",
                    self.version
                ),
            });
        }
        self.data.validate().map_err(|e| schema("data", e))?;
        if let Some(n) = &self.novel {
            n.validate().map_err(|e| schema("novel", e))?;
            if n.dim() != self.data.dim() {
                return Err(Error::Schema {
                    path: "novel.means".into(),
                    message: "dimension differs from data density".into(),
                });
            }
        }
        if let Some(pi) = self.pi {
            if !(0.0..=1.0).contains(&pi) {
                return Err(Error::Schema {
                    path: "pi".into(),
                    message: format!("{pi} outside [0, 1]"),
                });
            }
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.data.dim() || b.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::Schema {
                    path: "bounds".into(),
                    message: "need one increasing [lo, hi] pair per dimension".into(),
                });
            }
        }
        Ok(())
    }

    /// Mixture spec for the identity checks; a missing novel density makes
    /// the generator equal to the data density.
    pub fn mixture(&self) -> Result<MixtureSpec> {
        let novel = self.novel.clone().unwrap_or_else(|| self.data.clone());
        MixtureSpec::new(self.pi.unwrap_or(0.0), novel, self.data.clone())
    }

    /// Explicit bounds, or means +/- 6 standard deviations over both densities.
    pub fn grid_bounds(&self) -> Vec<(f64, f64)> {
        if let Some(b) = &self.bounds {
            return b.clone();
        }
        let dim = self.data.dim();
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
        for d in std::iter::once(&self.data).chain(self.novel.as_ref()) {
            for (m, v) in d.means.iter().zip(&d.variances) {
                for k in 0..dim {
                    let s = 6.0 * v[k].sqrt();
                    out[k].0 = out[k].0.min(m[k] - s);
                    out[k].1 = out[k].1.max(m[k] + s);
                }
            }
        }
        out
    }
}
