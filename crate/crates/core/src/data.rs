//! Trial containers, standardization, and CSV/manifest ingestion.
//!
//! Trial files are UTF-8 CSV with a header row of column names, one row per
//! frame, and an empty cell for every missing value. A manifest is JSON:
//!
//! ```json
//! { "name": "pendulum",
//!   "trials": [ { "path": "train.csv", "split": "train" },
//!               { "path": "test.csv",  "split": "test" } ] }
//! ```
//!
//! Paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One observed sequence `T × D` with its observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTensor {
    pub name: String,
    pub columns: Vec<String>,
    /// Standardized values. Missing entries hold 0.
    pub data: Tensor,
    /// Row-major, `true` = observed.
    pub mask: Vec<bool>,
    pub raw_mean: Vec<f64>,
    pub raw_scale: Vec<f64>,
}

impl TrialTensor {
    /// Wraps raw values with identity standardization. `mask = None` means
    /// fully observed.
    pub fn from_raw(name: impl Into<String>, raw: Tensor, mask: Option<Vec<bool>>) -> Result<Self> {
        let (t, d) = raw.shape();
        let mask = mask.unwrap_or_else(|| vec![true; t * d]);
        if mask.len() != t * d {
            return Err(Error::Dimension(format!(
                "mask has {} entries for a {t}x{d} trial",
                mask.len()
            )));
        }
        let mut data = raw;
        for (v, &m) in data.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(Self {
            name: name.into(),
            columns: (0..d).map(|j| format!("x{j}")).collect(),
            data,
            mask,
            raw_mean: vec![0.0; d],
            raw_scale: vec![1.0; d],
        })
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Self {
        self.columns = columns;
        self
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn observed(&self, t: usize, d: usize) -> bool {
        self.mask[t * self.dim() + d]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / self.mask.len().max(1) as f64
    }

    /// Mask as a 0/1 tensor.
    pub fn mask_tensor(&self) -> Tensor {
        let (t, d) = self.data.shape();
        Tensor::new(t, d, self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
            .expect("mask length checked at construction")
    }

    /// Standardized values with missing entries zeroed.
    pub fn masked_data(&self) -> Tensor {
        let mut x = self.data.clone();
        for (v, &m) in x.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
        x
    }

    /// Standardized values with each column's gaps filled by linear
    /// interpolation in time (nearest observed value at the ends). Used only
    /// for initialization.
    pub fn interpolated(&self) -> Tensor {
        let (t_len, d) = self.data.shape();
        let mut x = self.masked_data();
        for j in 0..d {
            let seen: Vec<usize> = (0..t_len).filter(|&t| self.observed(t, j)).collect();
            let (Some(&first), Some(&last)) = (seen.first(), seen.last()) else {
                continue;
            };
            for t in 0..first {
                x.set(t, j, self.data.get(first, j));
            }
            for t in last + 1..t_len {
                x.set(t, j, self.data.get(last, j));
            }
            for w in seen.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (va, vb) = (self.data.get(a, j), self.data.get(b, j));
                for t in a + 1..b {
                    x.set(t, j, va + (vb - va) * (t - a) as f64 / (b - a) as f64);
                }
            }
        }
        x
    }

    /// Maps standardized values back to data units.
    pub fn destandardize(&self, x: &Tensor) -> Tensor {
        Tensor::from_fn(x.rows(), x.cols(), |i, j| {
            x.get(i, j) * self.raw_scale[j] + self.raw_mean[j]
        })
    }

    /// Raw (data-unit) values; missing entries hold the column mean.
    pub fn to_raw(&self) -> Tensor {
        self.destandardize(&self.data)
    }

    /// Frames `start..end` as a new trial sharing the standardization.
    pub fn slice_frames(&self, start: usize, end: usize, name: impl Into<String>) -> Result<Self> {
        let d = self.dim();
        Ok(Self {
            name: name.into(),
            columns: self.columns.clone(),
            data: self.data.slice_rows(start, end)?,
            mask: self.mask[start * d..end * d].to_vec(),
            raw_mean: self.raw_mean.clone(),
            raw_scale: self.raw_scale.clone(),
        })
    }
}

/// Per-column affine map `standardized = (raw - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Statistics over the observed entries of `trials` (given in data
    /// units). Constant columns get scale 1.
    pub fn fit(trials: &[&TrialTensor]) -> Result<Self> {
        let d = trials
            .first()
            .ok_or_else(|| Error::Validation("no trials to standardize".into()))?
            .dim();
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for tr in trials {
            let raw = tr.to_raw();
            for t in 0..tr.len() {
                for j in 0..d {
                    if tr.observed(t, j) {
                        sum[j] += raw.get(t, j);
                        count[j] += 1;
                    }
                }
            }
        }
        if let Some(j) = count.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!("column {j} has no observed values")));
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut ss = vec![0.0; d];
        for tr in trials {
            let raw = tr.to_raw();
            for t in 0..tr.len() {
                for j in 0..d {
                    if tr.observed(t, j) {
                        ss[j] += (raw.get(t, j) - mean[j]).powi(2);
                    }
                }
            }
        }
        let scale = ss
            .iter()
            .zip(&count)
            .map(|(s, &c)| {
                let sd = (s / c as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    /// Re-expresses `trial` under these statistics.
    pub fn apply(&self, trial: &TrialTensor) -> Result<TrialTensor> {
        if trial.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "trial {} has {} columns, statistics cover {}",
                trial.name,
                trial.dim(),
                self.mean.len()
            )));
        }
        let raw = trial.to_raw();
        let mut data = Tensor::from_fn(raw.rows(), raw.cols(), |i, j| {
            (raw.get(i, j) - self.mean[j]) / self.scale[j]
        });
        for (v, &m) in data.data_mut().iter_mut().zip(&trial.mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(TrialTensor {
            data,
            raw_mean: self.mean.clone(),
            raw_scale: self.scale.clone(),
            ..trial.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub trials: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Standardized train and test trials of one dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub standardization: Standardization,
    pub train: Vec<TrialTensor>,
    pub test: Vec<TrialTensor>,
}

impl Dataset {
    /// Standardizes every trial with statistics of the train trials only.
    pub fn from_raw(name: impl Into<String>, train: Vec<TrialTensor>, test: Vec<TrialTensor>) -> Result<Self> {
        let stats = Standardization::fit(&train.iter().collect::<Vec<_>>())?;
        let train = train.iter().map(|t| stats.apply(t)).collect::<Result<Vec<_>>>()?;
        let test = test.iter().map(|t| stats.apply(t)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.into(),
            standardization: stats,
            train,
            test,
        })
    }
}

/// Reads every trial listed in the manifest and standardizes with
/// train-split statistics.
pub fn load_trials(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.trials {
        let path = base.join(&entry.path);
        let trial = read_trial_csv(&path)?;
        match entry.split {
            Split::Train => train.push(trial),
            Split::Test => test.push(trial),
        }
    }
    if train.is_empty() {
        return Err(Error::Validation("manifest lists no train trials".into()));
    }
    let d = train[0].dim();
    if let Some(t) = train.iter().chain(&test).find(|t| t.dim() != d) {
        return Err(Error::Format(format!(
            "trial {} has {} columns, expected {d}",
            t.name,
            t.dim()
        )));
    }
    Dataset::from_raw(manifest.name, train, test)
}

/// Reads one CSV trial in data units.
pub fn read_trial_csv(path: &Path) -> Result<TrialTensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let d = columns.len();
    if d == 0 {
        return Err(Error::Format(format!("{}: empty header", path.display())));
    }
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let record = record.map_err(|e| Error::Format(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != d {
            return Err(Error::Format(format!(
                "{}: row {line} has {} fields, header has {d}",
                path.display(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Format(format!(
                        "{}: row {line}, column {}: cannot parse {cell:?}",
                        path.display(),
                        columns[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Format(format!(
                        "{}: row {line}, column {}: non-finite value",
                        path.display(),
                        columns[j]
                    )));
                }
                values.push(v);
                mask.push(true);
            }
        }
    }
    let t = mask.len() / d;
    for j in 0..d {
        if (0..t).all(|i| !mask[i * d + j]) {
            return Err(Error::Validation(format!(
                "{}: column {} has no observed values",
                path.display(),
                columns[j]
            )));
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TrialTensor::from_raw(name, Tensor::new(t, d, values)?, Some(mask))?.with_columns(columns))
}

/// Writes `values` (data units) as a trial CSV; masked entries become empty cells.
pub fn write_trial_csv(path: &Path, columns: &[String], values: &Tensor, mask: Option<&[bool]>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for i in 0..values.rows() {
        let row: Vec<String> = (0..values.cols())
            .map(|j| {
                let observed = mask.map_or(true, |m| m[i * values.cols() + j]);
                if observed {
                    format!("{}", values.get(i, j))
                } else {
                    String::new()
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
