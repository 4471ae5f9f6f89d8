//! Forecast accuracy metrics on denormalized values.
//!
//! Percent metrics are normalized by the mean of the ground truth. NMBE uses
//! `truth − prediction`, so systematic over-prediction is negative.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, SequencePair};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{predict, Seq2SeqParams};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    if y.len() != yhat.len() {
        return Err(Error::dim("metric input", y.len(), yhat.len()));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `√(mean((y − ŷ)²))`
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(sse / y.len() as f64))
}

/// `100 · rmse / mean(y)`
pub fn cvrmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let r = rmse(y, yhat)?;
    let m = mean(y);
    if m == 0.0 {
        return Err(Error::ZeroMean { rmse: r });
    }
    Ok(100.0 * r / m)
}

/// `100 · Σ(y − ŷ) / (N · mean(y))`
pub fn nmbe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let m = mean(y);
    if m == 0.0 {
        return Err(Error::ZeroMean {
            rmse: rmse(y, yhat)?,
        });
    }
    let bias: f64 = y.iter().zip(yhat).map(|(a, b)| a - b).sum();
    Ok(100.0 * bias / (y.len() as f64 * m))
}

/// Mean absolute percentage error over points with nonzero truth. Returns
/// the value and the number of excluded zero-truth points.
pub fn mape_counted(y: &[f64], yhat: &[f64]) -> Result<(f64, usize)> {
    check_pair(y, yhat)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &b) in y.iter().zip(yhat) {
        if a != 0.0 {
            sum += libm::fabs(a - b) / libm::fabs(a);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Empty(
            "every ground-truth point is zero; MAPE undefined",
        ));
    }
    Ok((100.0 * sum / used as f64, y.len() - used))
}

/// `100 · mean(|y − ŷ| / |y|)`, skipping zero-truth points.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    mape_counted(y, yhat).map(|(v, _)| v)
}

/// Pooled metrics for one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon_steps: usize,
    #[serde(rename = "cvrmse_pct")]
    pub cvrmse: f64,
    #[serde(rename = "nmbe_pct")]
    pub nmbe: f64,
    #[serde(rename = "mape_pct")]
    pub mape: f64,
    pub rmse: f64,
    pub n_points: usize,
    /// Zero-truth points left out of MAPE.
    #[serde(default)]
    pub mape_excluded: usize,
}

impl EvalReport {
    /// Scores already-pooled, denormalized values.
    pub fn from_values(horizon_steps: usize, y: &[f64], yhat: &[f64]) -> Result<Self> {
        let (mape, mape_excluded) = mape_counted(y, yhat)?;
        Ok(EvalReport {
            horizon_steps,
            cvrmse: cvrmse(y, yhat)?,
            nmbe: nmbe(y, yhat)?,
            mape,
            rmse: rmse(y, yhat)?,
            n_points: y.len(),
            mape_excluded,
        })
    }
}

/// Ground truth and free-running prediction of one window, in original
/// units.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowForecast {
    pub t_first: i64,
    pub truth: Matrix,
    pub prediction: Matrix,
}

/// Predicts every window and maps both truth and prediction back to
/// original units using the target columns of `stats`.
pub fn forecast_windows<S: AsRef<str>>(
    params: &Seq2SeqParams,
    pairs: &[SequencePair],
    stats: &NormStats,
    targets: &[S],
) -> Result<Vec<WindowForecast>> {
    let idx = targets
        .iter()
        .map(|t| stats.index(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    if idx.len() != params.shape().output_dim {
        return Err(Error::dim(
            "target columns",
            params.shape().output_dim,
            idx.len(),
        ));
    }
    let denorm = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, &col) in idx.iter().enumerate() {
                out.set(r, c, stats.denormalize(col, m.get(r, c)));
            }
        }
        out
    };
    pairs
        .iter()
        .map(|pair| {
            let pred = predict(params, &pair.x, &pair.y0)?;
            Ok(WindowForecast {
                t_first: pair.t_first,
                truth: denorm(&pair.y),
                prediction: denorm(&pred),
            })
        })
        .collect()
}

/// Scores a model on normalized test windows, pooling all windows and all
/// horizon steps after denormalization.
pub fn evaluate<S: AsRef<str>>(
    params: &Seq2SeqParams,
    test_pairs: &[SequencePair],
    stats: &NormStats,
    targets: &[S],
) -> Result<EvalReport> {
    if test_pairs.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let forecasts = forecast_windows(params, test_pairs, stats, targets)?;
    report_from_forecasts(params.shape().horizon, &forecasts)
}

pub fn report_from_forecasts(
    horizon_steps: usize,
    forecasts: &[WindowForecast],
) -> Result<EvalReport> {
    let y: Vec<f64> = forecasts
        .iter()
        .flat_map(|f| f.truth.as_slice())
        .copied()
        .collect();
    let yhat: Vec<f64> = forecasts
        .iter()
        .flat_map(|f| f.prediction.as_slice())
        .copied()
        .collect();
    EvalReport::from_values(horizon_steps, &y, &yhat)
}
