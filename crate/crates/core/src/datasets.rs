//! Labeled embedding datasets: the `EMB1` binary layout, a CSV layout,
//! stratified low-data splits and synthetic Gaussian clusters.
//!
//! `EMB1` (all integers little-endian):
//!
//! ```text
//! offset 0   b"EMB1"
//! offset 4   u32 dim
//! offset 8   u32 count
//! offset 12  count * dim f32 rows
//! then       count u8 labels
//! ```
//!
//! CSV: header `label,f0,...,f{dim-1}`, one row per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_SPLIT, TAG_SYNTHETIC};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: u64 = 12;

/// Samples per class drawn for training and validation.
pub const DEFAULT_SAMPLES_PER_CLASS: usize = 256;
pub const VALIDATION_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// `.csv` is CSV; anything else is treated as `EMB1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub dim: usize,
    pub num_classes: usize,
    /// Row-major, `len() * dim` values.
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub splits: Splits,
}

impl EmbeddingDataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be >= 1".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Data(format!(
                "{} feature values do not form {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(Error::Data(format!("row {i} has label {l} >= {num_classes} classes")));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
            splits: Splits::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row_f32(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.row_f32(i).iter().map(|&v| v as f64).collect()
    }

    pub fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Panics if the splits overlap or reference rows that do not exist.
    pub fn assert_disjoint_splits(&self) {
        let mut seen = vec![false; self.len()];
        for i in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            assert!(*i < self.len(), "split index {i} out of range");
            assert!(!seen[*i], "index {i} appears in more than one split");
            seen[*i] = true;
        }
    }

    pub fn to_emb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize + self.features.len() * 4 + self.len());
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_emb1_bytes(bytes: &[u8], num_classes: usize) -> Result<Self> {
        if bytes.len() < HEADER_LEN as usize {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        if &bytes[0..4] != EMB_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected \"EMB1\"", String::from_utf8_lossy(&bytes[0..4])),
            });
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Format { offset: 4, message: "dim is 0".into() });
        }
        let expected = HEADER_LEN + (count as u64) * (dim as u64) * 4 + count as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Format {
                offset: (bytes.len() as u64).min(expected),
                message: format!(
                    "dim {dim} x count {count} needs {expected} bytes, file has {}",
                    bytes.len()
                ),
            });
        }
        let body = &bytes[HEADER_LEN as usize..];
        let n = count * dim;
        let features = body[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = body[n * 4..].to_vec();
        Self::new(dim, num_classes, features, labels)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for j in 0..self.dim {
            s.push_str(&format!(",f{j}"));
        }
        s.push('\n');
        for i in 0..self.len() {
            s.push_str(&self.labels[i].to_string());
            for v in self.row_f32(i) {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, num_classes: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format {
            offset: 0,
            message: "empty CSV".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(Error::Format { offset: 0, message: "header must start with 'label,f0'".into() });
        }
        let dim = cols.len() - 1;
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(Error::Format { offset: 0, message: format!("header column {} is '{c}', expected 'f{j}'", j + 1) });
            }
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Data(format!(
                    "line {}: {} fields, header declares {}",
                    lineno + 1,
                    fields.len(),
                    dim + 1
                )));
            }
            let label: u8 = fields[0]
                .parse()
                .map_err(|_| Error::Data(format!("line {}: bad label '{}'", lineno + 1, fields[0])))?;
            labels.push(label);
            for f in &fields[1..] {
                features.push(
                    f.parse::<f32>()
                        .map_err(|_| Error::Data(format!("line {}: bad value '{f}'", lineno + 1)))?,
                );
            }
        }
        Self::new(dim, num_classes, features, labels)
    }

    pub fn save(&self, path: &Path, format: EmbeddingFormat) -> Result<()> {
        let bytes = match format {
            EmbeddingFormat::Binary => self.to_emb1_bytes(),
            EmbeddingFormat::Csv => self.to_csv().into_bytes(),
        };
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat, num_classes: usize) -> Result<EmbeddingDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EmbeddingFormat::Binary => EmbeddingDataset::from_emb1_bytes(&bytes, num_classes),
        EmbeddingFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Format {
                offset: e.utf8_error().valid_up_to() as u64,
                message: "CSV is not valid UTF-8".into(),
            })?;
            EmbeddingDataset::from_csv(&text, num_classes)
        }
    }
}

/// Stratified split: `per_class` samples of every class are drawn by a
/// seeded shuffle; `floor(0.15 * per_class)` of each go to validation and
/// the rest to training. Every other sample forms the test split.
pub fn make_splits(mut dataset: EmbeddingDataset, per_class: usize, seed: u64) -> Result<EmbeddingDataset> {
    let counts = dataset.class_counts();
    if let Some((c, n)) = counts.iter().enumerate().find(|(_, &n)| n < per_class) {
        return Err(Error::Data(format!("class {c} has {n} samples, need {per_class}")));
    }
    let val_n = (VALIDATION_FRACTION * per_class as f64).floor() as usize;
    let mut used = vec![false; dataset.len()];
    let mut splits = Splits::default();
    for class in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] as usize == class).collect();
        members.shuffle(&mut rng::stream(seed, &[TAG_SPLIT, class as u64]));
        for (rank, &i) in members[..per_class].iter().enumerate() {
            used[i] = true;
            if rank < val_n {
                splits.val.push(i);
            } else {
                splits.train.push(i);
            }
        }
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test = (0..dataset.len()).filter(|&i| !used[i]).collect();
    dataset.splits = splits;
    dataset.assert_disjoint_splits();
    Ok(dataset)
}

/// 256 per class, 85/15 within each class (436 train / 76 validation for
/// two classes), remainder to test.
pub fn make_default_splits(dataset: EmbeddingDataset, seed: u64) -> Result<EmbeddingDataset> {
    make_splits(dataset, DEFAULT_SAMPLES_PER_CLASS, seed)
}

/// Two identity-covariance Gaussian clusters centred at `(s/2)(w - u)`
/// (label 0) and `(s/2)(w + u)` (label 1) for orthonormal random `u`, `w`,
/// so the centres are `s` apart. The shared offset `w` matters: amplitude
/// encoding followed by Z measurements is even in `x`, and clusters at
/// `±(s/2) u` would be indistinguishable to it.
pub fn synthetic_clusters(dim: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<EmbeddingDataset> {
    if !(separation >= 0.0) {
        return Err(Error::config(format!("separation {separation} must be >= 0")));
    }
    if dim < 2 {
        return Err(Error::config("synthetic clusters need dim >= 2"));
    }
    let mut rng = rng::stream(seed, &[TAG_SYNTHETIC]);
    let unit = |rng: &mut rng::Stream, against: Option<&[f64]>| {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(a) = against {
            let d: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    let u = unit(&mut rng, None);
    let w = unit(&mut rng, Some(&u));
    let mut features = Vec::with_capacity(2 * n_per_class * dim);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        // alternate classes so any prefix is balanced
        let label = (i % 2) as u8;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        for (uj, wj) in u.iter().zip(&w) {
            let noise: f64 = rng.sample(StandardNormal);
            features.push((0.5 * separation * (wj + sign * uj) + noise) as f32);
        }
        labels.push(label);
    }
    EmbeddingDataset::new(dim, 2, features, labels)
}
