use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Labeled examples with dense class ids `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    class_index: Vec<Vec<usize>>,
    class_names: Vec<String>,
}

/// Which split an episode is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Test => "test",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "val" => Ok(Phase::Val),
            "test" => Ok(Phase::Test),
            _ => Err(Error::Parameter(format!("unknown split `{s}`"))),
        }
    }
}

/// Class-disjoint train/val/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitConfig {
    /// Contiguous split of `0..num_classes`: the first `train_frac` of classes
    /// train, the next `val_frac` validate, the rest test.
    pub fn by_fraction(num_classes: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
            return Err(Error::Parameter(format!(
                "split fractions train={train_frac} val={val_frac} must be positive and sum below 1"
            )));
        }
        let n_train = (num_classes as f64 * train_frac).round() as usize;
        let n_val = (num_classes as f64 * val_frac).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= num_classes {
            return Err(Error::Parameter(format!(
                "cannot split {num_classes} classes as train={train_frac} val={val_frac}"
            )));
        }
        Ok(SplitConfig {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..num_classes).collect(),
        })
    }

    pub fn classes(&self, phase: Phase) -> &[usize] {
        match phase {
            Phase::Train => &self.train,
            Phase::Val => &self.val,
            Phase::Test => &self.test,
        }
    }

    /// Checks pairwise disjointness and that the union is exactly `0..num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut owner = vec![None; num_classes];
        for phase in [Phase::Train, Phase::Val, Phase::Test] {
            for &c in self.classes(phase) {
                let slot = owner.get_mut(c).ok_or_else(|| {
                    Error::Parameter(format!("split names class {c} but dataset has {num_classes}"))
                })?;
                if let Some(prev) = slot.replace(phase) {
                    return Err(Error::Parameter(format!(
                        "class {c} appears in both {prev} and {phase} splits"
                    )));
                }
            }
        }
        if let Some(c) = owner.iter().position(Option::is_none) {
            return Err(Error::Parameter(format!("class {c} is in no split")));
        }
        Ok(())
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    /// Name of the label column.
    pub label_column: String,
    /// Reject classes with fewer examples than this.
    pub min_per_class: usize,
    /// Classes whose examples define the normalization statistics; features stay raw when `None`.
    pub normalize_on: Option<Vec<usize>>,
}

impl CsvSchema {
    pub fn new() -> Self {
        CsvSchema {
            label_column: "label".into(),
            min_per_class: 0,
            normalize_on: None,
        }
    }
}

impl LabeledDataset {
    /// Builds a dataset from per-example labels (already dense) and a feature matrix.
    pub fn from_parts(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for feature matrix {:?}",
                labels.len(),
                features.shape()
            )));
        }
        let mut class_index = vec![Vec::new(); class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            class_index
                .get_mut(l)
                .ok_or_else(|| Error::Ingestion(format!("label {l} has no class name")))?
                .push(i);
        }
        Ok(LabeledDataset {
            name: name.into(),
            features,
            labels,
            class_index,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    /// Rejects datasets with a class smaller than `min`.
    pub fn check_min_class_size(&self, min: usize) -> Result<()> {
        for (c, idx) in self.class_index.iter().enumerate() {
            if idx.len() < min {
                return Err(Error::Ingestion(format!(
                    "class `{}` has {} examples, need at least {min}",
                    self.class_names[c],
                    idx.len()
                )));
            }
        }
        Ok(())
    }

    /// Standardizes every feature column with statistics from `classes`.
    /// Columns with zero variance are only centered.
    pub fn normalized(&self, classes: &[usize]) -> Result<Self> {
        let rows: Vec<usize> = classes
            .iter()
            .flat_map(|&c| self.class_index[c].iter().copied())
            .collect();
        if rows.is_empty() {
            return Err(Error::Ingestion("no examples to compute normalization on".into()));
        }
        let d = self.dim();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in &rows {
            for (m, v) in mean.iter_mut().zip(self.features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in &rows {
            for ((s, v), m) in var.iter_mut().zip(self.features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let data = self
            .features
            .data()
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(LabeledDataset {
            features: Tensor::new(self.features.shape().to_vec(), data)?,
            ..self.clone()
        })
    }

    /// Content hash over name-independent data: features (bit patterns), labels, class names.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for name in &self.class_names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes the dataset as `label,f0..fD` with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.class_names[self.labels[i]].clone()];
            rec.extend(self.features.row(i).iter().map(|&v| crate::io::fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads a `label,f0..fD` CSV file.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, &name, schema)
}

/// Parses CSV content from any reader; see [`load_csv`].
pub fn read_csv<R: Read>(reader: R, name: &str, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(Error::Ingestion("empty file".into())),
        Err(e) => return Err(Error::Ingestion(format!("unreadable header: {e}"))),
    };
    let label_col = headers
        .iter()
        .position(|h| h.trim() == schema.label_column)
        .ok_or_else(|| Error::Ingestion(format!("no `{}` column", schema.label_column)))?;
    let arity = headers.len();
    let dim = arity - 1;
    if dim == 0 {
        return Err(Error::Ingestion("no feature columns".into()));
    }

    let mut raw_labels = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after header
        let rec = rec.map_err(|e| Error::Ingestion(format!("row {row}: {e}")))?;
        if rec.len() != arity {
            return Err(Error::Ingestion(format!(
                "row {row} has {} fields, header has {arity}",
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            if j == label_col {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Ingestion(format!(
                    "row {row}, column `{}`: `{field}` is not numeric",
                    &headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion(format!(
                    "row {row}, column `{}`: non-finite value",
                    &headers[j]
                )));
            }
            data.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Ingestion("empty file".into()));
    }

    // Dense ids in sorted label order; numeric labels sort numerically.
    let all_int = raw_labels.iter().all(|l| l.parse::<i64>().is_ok());
    let mut names: Vec<String> = raw_labels.clone();
    if all_int {
        names.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        names.sort();
    }
    names.dedup();
    let lookup: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let labels = raw_labels.iter().map(|l| lookup[l.as_str()]).collect();

    let features = Tensor::new(vec![raw_labels.len(), dim], data)
        .map_err(|e| Error::Ingestion(e.to_string()))?;
    let ds = LabeledDataset::from_parts(name, features, labels, names.clone())?;
    ds.check_min_class_size(schema.min_per_class)?;
    match &schema.normalize_on {
        Some(classes) => {
            if let Some(&bad) = classes.iter().find(|&&c| c >= ds.num_classes()) {
                return Err(Error::Ingestion(format!(
                    "normalization class {bad} not in dataset"
                )));
            }
            ds.normalized(classes)
        }
        None => Ok(ds),
    }
}

/// Parameters of a Gaussian-cluster dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            num_classes: 20,
            per_class: 100,
            dim: 16,
            spread: 0.6,
            seed: 7,
        }
    }
}

/// Gaussian class clusters: means uniform in `[-1,1]^dim`, isotropic noise of std `spread`.
pub fn make_synthetic(p: &SyntheticParams) -> Result<LabeledDataset> {
    if p.num_classes < 10 {
        return Err(Error::Parameter(format!("num_classes must be >= 10, got {}", p.num_classes)));
    }
    if p.per_class < 20 {
        return Err(Error::Parameter(format!("per_class must be >= 20, got {}", p.per_class)));
    }
    if p.dim == 0 {
        return Err(Error::Parameter("dim must be >= 1".into()));
    }
    if !(p.spread.is_finite() && p.spread > 0.0) {
        return Err(Error::Parameter(format!("spread must be > 0, got {}", p.spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let noise = Normal::new(0.0, p.spread).map_err(|e| Error::Parameter(e.to_string()))?;
    let means: Vec<Vec<f64>> = (0..p.num_classes)
        .map(|_| (0..p.dim).map(|_| unif.sample(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(p.num_classes * p.per_class * p.dim);
    let mut labels = Vec::with_capacity(p.num_classes * p.per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..p.per_class {
            data.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let features = Tensor::new(vec![labels.len(), p.dim], data)?;
    LabeledDataset::from_parts(
        format!("synthetic-{}c-{}d-s{}", p.num_classes, p.dim, p.seed),
        features,
        labels,
        (0..p.num_classes).map(|c| c.to_string()).collect(),
    )
}
