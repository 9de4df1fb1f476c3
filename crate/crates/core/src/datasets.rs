//! In-memory classification datasets: synthetic blobs and MNIST in IDX
//! format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per sample.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("dataset has no samples".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("NaN feature".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Same features, different labels (e.g. after corruption).
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), labels, self.num_classes, self.name.clone())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.num_classes, self.name.clone())
    }

    /// CSV with header `label,f0,...,f{d-1}`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        writeln!(out, "label,{}", header.join(","))?;
        for (row, y) in self.features.rows().into_iter().zip(&self.labels) {
            write!(out, "{y}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Gaussian blobs around class centers evenly spaced on the unit circle in
/// the first two feature dimensions.
pub fn gen_blobs(k: usize, per_class_n: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || d < 2 {
        return Err(Error::Config(format!("blobs need K >= 2 and d >= 2, got K={k}, d={d}")));
    }
    if per_class_n == 0 {
        return Err(Error::Config("blobs need at least one sample per class".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = Rng::new(seed);
    let n = k * per_class_n;
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // interleave classes so prefixes stay balanced
        let c = i % k;
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        let mut row = features.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let center = match j {
                0 => angle.cos(),
                1 => angle.sin(),
                _ => 0.0,
            };
            *v = center + spread * rng.normal();
        }
        labels.push(c);
    }
    Dataset::new(features, labels, k, "blobs")
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Reads an IDX image/label pair (plain or gzipped). Pixels are scaled to
/// `[0, 1]`; no mean subtraction.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images_path)?;
    let lab = read_maybe_gz(labels_path)?;

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let d = rows * cols;
    let body = &img[16..];
    if body.len() != n * d {
        return Err(Error::format(
            images_path,
            format!("expected {} pixel bytes, found {}", n * d, body.len()),
        ));
    }

    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(Error::format(
            labels_path,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    let label_bytes = &lab[8..];
    if label_bytes.len() != n {
        return Err(Error::format(
            labels_path,
            format!("expected {n} label bytes, found {}", label_bytes.len()),
        ));
    }
    if let Some(b) = label_bytes.iter().find(|&&b| b > 9) {
        return Err(Error::format(labels_path, format!("label {b} is not a digit")));
    }

    let features = Array2::from_shape_vec((n, d), body.iter().map(|&b| b as f64 / 255.0).collect())
        .expect("shape checked above");
    let labels = label_bytes.iter().map(|&b| b as usize).collect();
    Dataset::new(features, labels, 10, "mnist")
}

/// Writes an IDX pair. Features must be in `[0, 1]` and are quantized to
/// bytes; `d` must equal `rows * cols`.
pub fn write_mnist_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
    gzip: bool,
) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::InvalidInput(format!(
            "{rows}x{cols} does not match feature width {}",
            dataset.dim()
        )));
    }
    if dataset.labels.iter().any(|&y| y > 255) {
        return Err(Error::InvalidInput("labels must fit in a byte".into()));
    }
    let mut img = Vec::with_capacity(16 + dataset.len() * dataset.dim());
    for v in [IDX_IMAGES_MAGIC, dataset.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        dataset
            .features
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, dataset.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels.iter().map(|&y| y as u8));
    write_bytes(images_path, &img, gzip)?;
    write_bytes(labels_path, &lab, gzip)
}

fn write_bytes(path: &Path, bytes: &[u8], gzip: bool) -> Result<()> {
    let result = if gzip {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        fs::write(path, bytes)
    };
    result.map_err(|e| Error::io(path, e))
}

/// Stratified split: `per_class_n` samples of every class are chosen by a
/// seeded shuffle; both parts keep the original sample order.
pub fn split_stratified(dataset: &Dataset, per_class_n: usize, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let counts = dataset.class_counts();
    if let Some((c, &have)) = counts.iter().enumerate().find(|(_, &n)| n < per_class_n) {
        return Err(Error::Config(format!(
            "class {c} has {have} samples, fewer than the {per_class_n} requested"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut chosen = vec![false; dataset.len()];
    for c in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        rng.shuffle(&mut members);
        for &i in &members[..per_class_n] {
            chosen[i] = true;
        }
    }
    let picked: Vec<usize> = (0..dataset.len()).filter(|&i| chosen[i]).collect();
    let rest: Vec<usize> = (0..dataset.len()).filter(|&i| !chosen[i]).collect();
    if picked.is_empty() {
        return Err(Error::Config("stratified subset is empty".into()));
    }
    let rest = if rest.is_empty() {
        None
    } else {
        Some(dataset.select(&rest)?)
    };
    Ok((dataset.select(&picked)?, rest))
}

pub fn subset(dataset: &Dataset, per_class_n: usize, seed: u64) -> Result<Dataset> {
    Ok(split_stratified(dataset, per_class_n, seed)?.0)
}

/// Holds out `fraction` of every class (rounded, at least one sample) and
/// returns `(kept, held_out)`.
pub fn holdout_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut rng = Rng::new(seed);
    let mut held = vec![false; dataset.len()];
    for c in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len());
        for &i in &members[..take] {
            held[i] = true;
        }
    }
    let kept: Vec<usize> = (0..dataset.len()).filter(|&i| !held[i]).collect();
    let out: Vec<usize> = (0..dataset.len()).filter(|&i| held[i]).collect();
    if kept.is_empty() {
        return Err(Error::Config("holdout leaves no training samples".into()));
    }
    Ok((dataset.select(&kept)?, dataset.select(&out)?))
}
