//! Time-series tables and the transforms that turn them into training
//! samples: resampling, chronological splits, z-score normalization,
//! feature remapping and sliding windows.
//!
//! Timestamps are integer epoch seconds. All transforms are pure
//! table-to-table functions.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Columnar multivariate time series with feature and target roles.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    timestamps: Vec<i64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    target_names: Vec<String>,
    sample_period: i64,
}

impl TimeSeriesTable {
    pub fn new(
        timestamps: Vec<i64>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        target_names: Vec<String>,
        sample_period: i64,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::dim("table column names", columns.len(), names.len()));
        }
        for col in &columns {
            if col.len() != timestamps.len() {
                return Err(Error::dim(
                    "table column length",
                    timestamps.len(),
                    col.len(),
                ));
            }
        }
        if sample_period <= 0 {
            return Err(Error::Config(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "timestamps must be strictly increasing (row {} is not after row {})",
                i + 1,
                i
            )));
        }
        if target_names.is_empty() {
            return Err(Error::Config(
                "at least one target column is required".to_string(),
            ));
        }
        if feature_names.is_empty() {
            return Err(Error::Config(
                "at least one feature column is required".to_string(),
            ));
        }
        for name in feature_names.iter().chain(&target_names) {
            if !names.contains(name) {
                return Err(Error::UnknownColumn(name.clone()));
            }
        }
        Ok(TimeSeriesTable {
            timestamps,
            names,
            columns,
            feature_names,
            target_names,
            sample_period,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn sample_period(&self) -> i64 {
        self.sample_period
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    fn indices(&self, names: &[String]) -> Vec<usize> {
        // names were validated at construction
        names
            .iter()
            .map(|n| self.names.iter().position(|m| m == n).unwrap_or(usize::MAX))
            .collect()
    }

    pub fn feature_indices(&self) -> Vec<usize> {
        self.indices(&self.feature_names)
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.indices(&self.target_names)
    }

    /// Rows `range.start..range.end`, keeping roles and period.
    pub fn slice_rows(&self, start: usize, end: usize) -> TimeSeriesTable {
        TimeSeriesTable {
            timestamps: self.timestamps[start..end].to_vec(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c[start..end].to_vec())
                .collect(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            sample_period: self.sample_period,
        }
    }

    /// Drops every row holding a non-finite value and returns the number
    /// dropped. Dropped rows leave timestamp gaps that windowing will not
    /// bridge.
    pub fn drop_non_finite_rows(&self) -> (TimeSeriesTable, usize) {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&r| self.columns.iter().all(|c| c[r].is_finite()))
            .collect();
        let dropped = self.len() - keep.len();
        let table = TimeSeriesTable {
            timestamps: keep.iter().map(|&r| self.timestamps[r]).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| keep.iter().map(|&r| c[r]).collect())
                .collect(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            sample_period: self.sample_period,
        };
        (table, dropped)
    }

    /// Same data with different feature/target roles.
    pub fn with_roles(
        &self,
        features: Vec<String>,
        targets: Vec<String>,
    ) -> Result<TimeSeriesTable> {
        TimeSeriesTable::new(
            self.timestamps.clone(),
            self.names.clone(),
            self.columns.clone(),
            features,
            targets,
            self.sample_period,
        )
    }
}

/// One training sample: a `K × d` input window, the following `L × p`
/// targets and the last observed target vector `y0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pub x: Matrix,
    pub y: Matrix,
    pub y0: Vec<f64>,
    /// Timestamp of the first input row.
    pub t_first: i64,
    /// Timestamp of the last target row.
    pub t_last: i64,
}

/// Block-mean downsampling to `new_period` seconds. Each output row is the
/// mean of `new_period / sample_period` consecutive rows, stamped with the
/// last timestamp of its block; a trailing partial block is discarded.
pub fn resample(table: &TimeSeriesTable, new_period: i64) -> Result<TimeSeriesTable> {
    let period = table.sample_period;
    if new_period <= 0 || new_period % period != 0 {
        return Err(Error::Config(format!(
            "resample period {new_period}s is not a positive multiple of the sample period {period}s"
        )));
    }
    let factor = (new_period / period) as usize;
    if factor == 1 {
        return Ok(table.clone());
    }
    let n_out = table.len() / factor;
    let timestamps = (0..n_out)
        .map(|b| table.timestamps[(b + 1) * factor - 1])
        .collect();
    let columns = table
        .columns
        .iter()
        .map(|c| {
            c.chunks_exact(factor)
                .map(|block| block.iter().sum::<f64>() / factor as f64)
                .collect()
        })
        .collect();
    Ok(TimeSeriesTable {
        timestamps,
        names: table.names.clone(),
        columns,
        feature_names: table.feature_names.clone(),
        target_names: table.target_names.clone(),
        sample_period: new_period,
    })
}

/// First `⌊ratio · n⌋` rows for training, the rest for testing, in order.
pub fn chrono_split(
    table: &TimeSeriesTable,
    ratio: f64,
) -> Result<(TimeSeriesTable, TimeSeriesTable)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = table.len();
    // absorb representation error such as 0.67 * 100 = 67.00000000000001
    let n_train = libm::floor(ratio * n as f64 + 1e-9) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "split ratio {ratio} on {n} rows leaves one side empty"
        )));
    }
    Ok((table.slice_rows(0, n_train), table.slice_rows(n_train, n)))
}

/// Per-column z-score statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub std: Vec<f64>,
    /// Columns whose spread was zero.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn normalize(&self, idx: usize, value: f64) -> f64 {
        (value - self.mean[idx]) / self.std[idx]
    }

    pub fn denormalize(&self, idx: usize, value: f64) -> f64 {
        value * self.std[idx] + self.mean[idx]
    }
}

/// Fits mean and population standard deviation of every column.
pub fn fit_norm(train: &TimeSeriesTable) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Empty(
            "normalization statistics need at least one row",
        ));
    }
    let n = train.len() as f64;
    let mut stats = NormStats {
        names: train.names.clone(),
        mean: Vec::with_capacity(train.names.len()),
        std: Vec::with_capacity(train.names.len()),
        constant: Vec::with_capacity(train.names.len()),
    };
    for (name, col) in train.names.iter().zip(&train.columns) {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        let constant = std.is_nan() || std <= 1e-12 * (1.0 + mean.abs());
        if constant {
            log::warn!("column `{name}` is constant on the training split; using std = 1");
        }
        stats.mean.push(mean);
        stats.std.push(if constant { 1.0 } else { std });
        stats.constant.push(constant);
    }
    Ok(stats)
}

/// Normalizes every column of `table` with previously fitted `stats`.
pub fn apply_norm(table: &TimeSeriesTable, stats: &NormStats) -> Result<TimeSeriesTable> {
    map_columns(table, stats, NormStats::normalize)
}

/// Inverse of [`apply_norm`].
pub fn denormalize(table: &TimeSeriesTable, stats: &NormStats) -> Result<TimeSeriesTable> {
    map_columns(table, stats, NormStats::denormalize)
}

fn map_columns(
    table: &TimeSeriesTable,
    stats: &NormStats,
    f: fn(&NormStats, usize, f64) -> f64,
) -> Result<TimeSeriesTable> {
    let mut out = table.clone();
    for (name, col) in out.names.iter().zip(out.columns.iter_mut()) {
        let idx = stats.index(name)?;
        col.iter_mut().for_each(|v| *v = f(stats, idx, *v));
    }
    Ok(out)
}

/// Sliding windows starting at rows `0, stride, 2·stride, …`.
///
/// On a gap-free table this yields `⌊(n − K − L) / stride⌋ + 1` pairs.
/// Windows whose `K + L` rows are not evenly spaced by the sample period
/// (because rows were dropped) are skipped.
pub fn make_windows(
    table: &TimeSeriesTable,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SequencePair>> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(
            "window length, horizon and stride must all be >= 1".to_string(),
        ));
    }
    let span = input_len + horizon;
    let n = table.len();
    if n < span {
        return Err(Error::TooShort {
            required: span,
            actual: n,
        });
    }
    let features = table.feature_indices();
    let targets = table.target_indices();
    let (d, p) = (features.len(), targets.len());
    let period = table.sample_period;
    let ts = &table.timestamps;

    let mut pairs = Vec::with_capacity((n - span) / stride + 1);
    let mut start = 0;
    while start + span <= n {
        let contiguous = ts[start..start + span]
            .windows(2)
            .all(|w| w[1] - w[0] == period);
        if contiguous {
            let mut x = vec![0.0; input_len * d];
            for k in 0..input_len {
                for (j, &c) in features.iter().enumerate() {
                    x[k * d + j] = table.columns[c][start + k];
                }
            }
            let mut y = vec![0.0; horizon * p];
            for l in 0..horizon {
                for (j, &c) in targets.iter().enumerate() {
                    y[l * p + j] = table.columns[c][start + input_len + l];
                }
            }
            let last = start + input_len - 1;
            pairs.push(SequencePair {
                x: Matrix::from_vec(input_len, d, x)?,
                y: Matrix::from_vec(horizon, p, y)?,
                y0: targets.iter().map(|&c| table.columns[c][last]).collect(),
                t_first: ts[start],
                t_last: ts[start + span - 1],
            });
        }
        start += stride;
    }
    Ok(pairs)
}

/// Where one source-model input feature comes from in the target table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    Column(String),
    Zero,
}

impl FeatureSource {
    /// Token used for a zero-padded slot in textual feature maps.
    pub const ZERO_TOKEN: &'static str = "@zero";

    pub fn parse(token: &str) -> FeatureSource {
        if token == Self::ZERO_TOKEN {
            FeatureSource::Zero
        } else {
            FeatureSource::Column(token.to_owned())
        }
    }
}

/// Ordered input layout expected by a source model, expressed in terms of
/// target-domain columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub entries: Vec<FeatureSource>,
}

impl FeatureMap {
    pub fn new(entries: Vec<FeatureSource>) -> Self {
        FeatureMap { entries }
    }

    pub fn parse<S: AsRef<str>>(tokens: &[S]) -> Self {
        FeatureMap {
            entries: tokens
                .iter()
                .map(|t| FeatureSource::parse(t.as_ref()))
                .collect(),
        }
    }

    /// Map that keeps the current features of `table` unchanged.
    pub fn identity(table: &TimeSeriesTable) -> Self {
        FeatureMap {
            entries: table
                .feature_names
                .iter()
                .map(|n| FeatureSource::Column(n.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rebuilds the feature list of `table` according to `map`. Zero slots get
/// fresh all-zero columns named `zero_pad_<slot>`; target columns are left
/// untouched.
pub fn remap_features(table: &TimeSeriesTable, map: &FeatureMap) -> Result<TimeSeriesTable> {
    if map.is_empty() {
        return Err(Error::Config("feature map is empty".to_string()));
    }
    let mut out = table.clone();
    let mut features = Vec::with_capacity(map.len());
    for (slot, entry) in map.entries.iter().enumerate() {
        match entry {
            FeatureSource::Column(name) => {
                table.column_index(name)?;
                features.push(name.clone());
            }
            FeatureSource::Zero => {
                let name = format!("zero_pad_{slot}");
                if out.names.contains(&name) {
                    return Err(Error::Config(format!("column `{name}` already exists")));
                }
                out.names.push(name.clone());
                out.columns.push(vec![0.0; table.len()]);
                features.push(name);
            }
        }
    }
    out.feature_names = features;
    Ok(out)
}
