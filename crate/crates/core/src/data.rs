//! Datasets, the synthetic ring benchmark, and IDX / CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::GaussianMixtureDensity;
use crate::rng::{RngStreams, Stream};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    pub split: SplitTag,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        split: SplitTag,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(Error::invalid(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if !features.all_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
            if let Some(&bad) = l.iter().find(|&&v| v >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Row indices per class; errors when labels are absent.
    pub fn class_indices(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.labels.as_ref().ok_or_else(|| {
            Error::invalid(format!("dataset `{}` has no labels", self.provenance))
        })?;
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in labels.iter().enumerate() {
            out[l].push(i);
        }
        Ok(out)
    }

    /// SHA-256 over shape, features, labels and class count.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        match &self.labels {
            None => h.update([0u8]),
            Some(l) => {
                h.update([1u8]);
                for &v in l {
                    h.update((v as u64).to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Equal-weight Gaussians at angles `2 pi i / count` on a circle, with the
/// exact density of the mixture. Components are assigned round-robin and the
/// rows then shuffled, so every component gets `n / count` or one more points.
pub fn gen_ring_mixture(
    n: usize,
    count: usize,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, GaussianMixtureDensity)> {
    if count < 2 || !(radius > 0.0) || !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "ring needs count >= 2, radius > 0, sigma > 0 (got {count}, {radius}, {sigma})"
        )));
    }
    if n < count {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot cover {count} components"
        )));
    }
    let density = ring_density(count, radius, sigma)?;
    let streams = RngStreams::new(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % count).collect();
    labels.shuffle(&mut streams.stream(Stream::Shuffling));
    let mut rng = streams.stream(Stream::Sampling);
    let mut data = Vec::with_capacity(2 * n);
    for &c in &labels {
        for &mu in &density.means()[c] {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + sigma * e);
        }
    }
    let ds = Dataset::new(
        Tensor::new([n, 2], data)?,
        Some(labels),
        count,
        SplitTag::Train,
        format!("ring(n={n}, count={count}, radius={radius}, sigma={sigma}, seed={seed})"),
    )?;
    Ok((ds, density))
}

pub fn ring_density(count: usize, radius: f64, sigma: f64) -> Result<GaussianMixtureDensity> {
    let means = (0..count)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / count as f64;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    GaussianMixtureDensity::isotropic(means, sigma * sigma)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn idx_header(path: &Path, bytes: &[u8], magic: u32) -> Result<(Vec<usize>, usize)> {
    let fmt = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let ndim = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(fmt(
            0,
            format!(
                "truncated header: expected {header_len} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(fmt(
            0,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let payload: usize = dims.iter().product();
    let actual = bytes.len() - header_len;
    if actual != payload {
        return Err(fmt(
            header_len,
            format!("payload has {actual} bytes, expected {payload}"),
        ));
    }
    Ok((dims, header_len))
}

/// Reads an IDX image file (`0x00000803`) into unlabeled rows of `rows * cols`
/// features scaled to `[0, 1]`.
pub fn read_idx(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (dims, start) = idx_header(path, &bytes, IDX_IMAGES)?;
    let d = dims[1] * dims[2];
    let data = bytes[start..].iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(
        Tensor::new([dims[0], d], data)?,
        None,
        0,
        SplitTag::Train,
        path.display().to_string(),
    )
}

/// Reads an IDX label file (`0x00000801`).
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (_, start) = idx_header(path, &bytes, IDX_LABELS)?;
    Ok(bytes[start..].iter().map(|&b| b as usize).collect())
}

/// Images plus labels as a labeled dataset; `K` is one more than the largest label.
pub fn read_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    split: SplitTag,
) -> Result<Dataset> {
    let img = read_idx(&images)?;
    let lab = read_idx_labels(&labels)?;
    let k = lab.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        img.features,
        Some(lab),
        k,
        split,
        format!(
            "{} + {}",
            images.as_ref().display(),
            labels.as_ref().display()
        ),
    )
}

fn quantize(v: f64) -> Result<u8> {
    let q = (v * 255.0).round();
    if !(0.0..=255.0).contains(&q) {
        return Err(Error::invalid(format!("feature {v} outside [0, 1]")));
    }
    Ok(q as u8)
}

/// Encodes square images as IDX bytes (values rounded to the nearest `k / 255`).
pub fn encode_idx_images(data: &Dataset) -> Result<Vec<u8>> {
    let side = square_side(data.dim())?;
    let mut out = Vec::with_capacity(16 + data.features.len());
    out.extend(IDX_IMAGES.to_be_bytes());
    for d in [data.len(), side, side] {
        out.extend((d as u32).to_be_bytes());
    }
    for &v in data.features.data() {
        out.push(quantize(v)?);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l)
                .map_err(|_| Error::invalid(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

fn square_side(d: usize) -> Result<usize> {
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(Error::invalid(format!(
            "feature length {d} is not a perfect square"
        )));
    }
    Ok(side)
}

/// Which CSV column holds labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// `original[k]` is the raw label text that was mapped to class `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub original: Vec<String>,
}

fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    let ok = !t.is_empty()
        && t.bytes()
            .all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b));
    if !ok {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV. A first row containing any non-numeric cell is a
/// header. Labels, when a column is named, are remapped to `0..K` in sorted
/// order (numeric order when every label parses as a number).
pub fn read_csv_dataset(
    path: impl AsRef<Path>,
    label: Option<&LabelColumn>,
) -> Result<(Dataset, Option<LabelMapping>)> {
    let path = path.as_ref();
    let csv_err = |row: usize, column: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(0, 0, e.to_string()))?;
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        rows.push(rec.map_err(|e| csv_err(i + 1, 0, e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(csv_err(0, 0, "file is empty".into()));
    }
    let header = rows[0]
        .iter()
        .any(|c| parse_number(c).is_none())
        .then(|| rows.remove(0));
    let first_data_row = if header.is_some() { 2 } else { 1 };
    if rows.is_empty() {
        return Err(csv_err(first_data_row, 0, "no data rows".into()));
    }
    let width = header.as_ref().map_or(rows[0].len(), |h| h.len());
    let label_idx = match label {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(csv_err(
                0,
                i + 1,
                format!("label column {i} beyond width {width}"),
            ))
        }
        Some(LabelColumn::Name(n)) => {
            let h = header.as_ref().ok_or_else(|| {
                csv_err(
                    1,
                    0,
                    format!("label column `{n}` named but file has no header"),
                )
            })?;
            Some(
                h.iter()
                    .position(|c| c.trim() == n)
                    .ok_or_else(|| csv_err(1, 0, format!("no column named `{n}`")))?,
            )
        }
    };

    let mut features = Vec::with_capacity(rows.len() * width);
    let mut raw_labels = Vec::new();
    for (r, rec) in rows.iter().enumerate() {
        let row_no = r + first_data_row;
        if rec.len() != width {
            return Err(csv_err(
                row_no,
                rec.len().min(width) + 1,
                format!("expected {width} cells, found {}", rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let v = parse_number(cell)
                .ok_or_else(|| csv_err(row_no, c + 1, format!("`{cell}` is not a number")))?;
            features.push(v);
        }
    }
    let d = width - label_idx.is_some() as usize;
    let feats = Tensor::new([rows.len(), d], features)?;
    let provenance = path.display().to_string();
    if label_idx.is_none() {
        return Ok((
            Dataset::new(feats, None, 0, SplitTag::Train, provenance)?,
            None,
        ));
    }

    let numeric = raw_labels.iter().all(|l| parse_number(l).is_some());
    let mut distinct: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if numeric {
        distinct.sort_by(|a, b| {
            parse_number(a)
                .unwrap()
                .total_cmp(&parse_number(b).unwrap())
        });
    }
    let index: BTreeMap<&str, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();
    let k = distinct.len();
    Ok((
        Dataset::new(feats, Some(labels), k, SplitTag::Train, provenance)?,
        Some(LabelMapping { original: distinct }),
    ))
}

/// Picks `per_class` examples of every class uniformly without replacement;
/// returns them (labeled) and the rest (unlabeled).
pub fn subsample_labeled(
    data: &Dataset,
    per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let classes = data.class_indices()?;
    let mut rng = RngStreams::new(seed).stream(Stream::Shuffling);
    let mut chosen = Vec::with_capacity(per_class * classes.len());
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} examples, {per_class} requested",
                idx.len()
            )));
        }
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..per_class]);
    }
    chosen.sort_unstable();
    let mut taken = vec![false; data.len()];
    for &i in &chosen {
        taken[i] = true;
    }
    let rest: Vec<usize> = (0..data.len()).filter(|&i| !taken[i]).collect();
    Ok((data.select(&chosen), data.select(&rest).without_labels()))
}

/// Overlap weights of `to` output cells over `from` input cells on a unit interval.
fn area_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|j| {
            let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < from {
                let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Area-average resampling of square images from `side x side` to `target x target`.
pub fn downscale_images(data: &Dataset, side: usize, target: usize) -> Result<Dataset> {
    if side * side != data.dim() {
        return Err(Error::invalid(format!(
            "feature length {} is not {side} x {side}",
            data.dim()
        )));
    }
    if target == 0 {
        return Err(Error::invalid("target side must be positive"));
    }
    let w = area_weights(side, target);
    let mut out = Vec::with_capacity(data.len() * target * target);
    for img in data.features.row_iter() {
        for wy in &w {
            for wx in &w {
                let mut acc = 0.0;
                for &(y, a) in wy {
                    for &(x, b) in wx {
                        acc += a * b * img[y * side + x];
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(Dataset {
        features: Tensor::new([data.len(), target * target], out)?,
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        split: data.split,
        provenance: format!("{} @ {target}x{target}", data.provenance),
    })
}

/// Uniform random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
