//! Pretrain on a source building, adapt to a target building, and compare
//! against training on the target alone.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thermoda_core::metrics::{forecast_windows, report_from_forecasts, WindowForecast};
use thermoda_core::optim::TrainTrace;
use thermoda_core::{
    apply_norm, chrono_split, fit_norm, init_params, make_windows, remap_features, train,
    EvalReport, FeatureMap, ModelShape, NormStats, Seq2SeqParams, SequencePair, TimeSeriesTable,
    TrainConfig,
};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::error::{Error, Result, ResultExt};

/// One building's data and how it is cut into windows.
#[derive(Clone, Debug)]
pub struct DomainData {
    pub name: String,
    pub table: TimeSeriesTable,
    /// Step between training window starts.
    pub train_stride: usize,
    /// Step between test window starts.
    pub eval_stride: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub source: DomainData,
    pub target: DomainData,
    /// Target-domain columns feeding each source-model input.
    pub feature_map: Option<FeatureMap>,
    pub hidden: usize,
    pub input_len: usize,
    pub horizons: Vec<usize>,
    pub split_ratio: f64,
    /// Seeds parameter initialization and batch shuffling.
    pub seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
    /// Recorded in checkpoint provenance.
    pub config_digest: String,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "horizons must be a non-empty list of positive step counts".into(),
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.hidden == 0 || self.input_len == 0 {
            return Err(Error::Config("hidden and input_len must be >= 1".into()));
        }
        for d in [&self.source, &self.target] {
            if d.train_stride == 0 || d.eval_stride == 0 {
                return Err(Error::Config(format!(
                    "strides of `{}` must be >= 1",
                    d.name
                )));
            }
        }
        if let Some(map) = &self.feature_map {
            let d = self.source.table.feature_names().len();
            if map.len() != d {
                return Err(Error::Config(format!(
                    "feature map has {} entries but the source has {d} features",
                    map.len()
                )));
            }
        }
        for (name, cfg) in [
            ("pretrain", &self.pretrain),
            ("finetune", &self.finetune),
            ("scratch", &self.scratch),
        ] {
            cfg.validate().context(|| format!("[{name}]"))?;
        }
        Ok(())
    }

    fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..base.clone()
        }
    }

    fn shape(&self, table: &TimeSeriesTable, horizon: usize) -> Result<ModelShape> {
        Ok(ModelShape::new(
            table.feature_names().len(),
            table.target_names().len(),
            self.hidden,
            self.input_len,
            horizon,
        )?)
    }

    /// Target table in the source model's input layout.
    fn mapped_target(&self) -> Result<TimeSeriesTable> {
        let (table, dropped) = self.target.table.drop_non_finite_rows();
        if dropped > 0 {
            log::warn!(
                "{}: dropped {dropped} rows with missing values",
                self.target.name
            );
        }
        match &self.feature_map {
            Some(map) => Ok(remap_features(&table, map)
                .context(|| format!("remapping `{}`", self.target.name))?),
            None => Ok(table),
        }
    }

    /// Refuses source/target pairs whose input or output widths differ.
    pub fn check_compatible(&self) -> Result<()> {
        let target = self.mapped_target()?;
        let src = &self.source.table;
        check_widths(
            src.feature_names().len(),
            src.target_names().len(),
            &target,
            self.feature_map.is_some(),
        )
    }
}

fn check_widths(d: usize, p: usize, target: &TimeSeriesTable, mapped: bool) -> Result<()> {
    let (td, tp) = (target.feature_names().len(), target.target_names().len());
    if td != d {
        let hint = if mapped {
            ""
        } else {
            "; supply a feature map to align them"
        };
        return Err(Error::Config(format!(
            "source model takes d={d} input features but the target provides d={td}{hint}"
        )));
    }
    if tp != p {
        return Err(Error::Config(format!(
            "source model predicts p={p} targets but the target domain has p={tp}"
        )));
    }
    Ok(())
}

/// Normalized train/test windows of the target domain.
#[derive(Clone, Debug)]
pub struct TargetWindows {
    pub stats: NormStats,
    pub target_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub train: Vec<SequencePair>,
    pub test: Vec<SequencePair>,
    pub sample_period: i64,
    /// SHA-256 over every train and test window.
    pub digest: String,
}

/// Hashes window contents in order, for checking that two runs saw the
/// same data.
pub fn window_digest<'a>(pairs: impl IntoIterator<Item = &'a SequencePair>) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(p.t_first.to_le_bytes());
        h.update(p.t_last.to_le_bytes());
        for v in p.x.as_slice().iter().chain(p.y.as_slice()).chain(&p.y0) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Chronological split, per-domain normalization fitted on the training
/// part, and windowing.
pub fn target_windows(
    spec: &ExperimentSpec,
    input_len: usize,
    horizon: usize,
) -> Result<TargetWindows> {
    let table = spec.mapped_target()?;
    let name = &spec.target.name;
    let (train_raw, test_raw) =
        chrono_split(&table, spec.split_ratio).context(|| format!("splitting `{name}`"))?;
    let stats = fit_norm(&train_raw)?;
    let train_tab = apply_norm(&train_raw, &stats)?;
    let test_tab = apply_norm(&test_raw, &stats)?;
    let train = make_windows(&train_tab, input_len, horizon, spec.target.train_stride)
        .context(|| format!("windowing the `{name}` training split"))?;
    let test = make_windows(&test_tab, input_len, horizon, spec.target.eval_stride)
        .context(|| format!("windowing the `{name}` test split"))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "`{name}` yields {} training and {} test windows at horizon {horizon}",
            train.len(),
            test.len()
        )));
    }
    let digest = window_digest(train.iter().chain(&test));
    Ok(TargetWindows {
        stats,
        target_names: table.target_names().to_vec(),
        feature_names: table.feature_names().to_vec(),
        train,
        test,
        sample_period: table.sample_period(),
        digest,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pretrain,
    Adapt,
    Scratch,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pretrain => "pretrain",
            Mode::Adapt => "adapt",
            Mode::Scratch => "scratch",
        }
    }
}

/// A model trained on the target domain and its test-split evaluation.
#[derive(Clone, Debug)]
pub struct TargetRun {
    pub mode: Mode,
    pub trace: TrainTrace,
    pub report: EvalReport,
    pub forecasts: Vec<WindowForecast>,
    pub data: TargetWindows,
}

impl TargetRun {
    pub fn params(&self) -> &Seq2SeqParams {
        &self.trace.params
    }

    pub fn checkpoint(&self, spec: &ExperimentSpec) -> Checkpoint {
        Checkpoint {
            params: self.trace.params.clone(),
            norm: self.data.stats.clone(),
            feature_names: self.data.feature_names.clone(),
            target_names: self.data.target_names.clone(),
            provenance: Provenance {
                config_digest: spec.config_digest.clone(),
                epochs: self.trace.epoch_loss.len(),
                final_loss: self.trace.final_loss(),
                seed: spec.seed,
            },
        }
    }
}

/// Trains a fresh model on the whole source dataset.
pub fn pretrain(spec: &ExperimentSpec, horizon: usize) -> Result<(Checkpoint, TrainTrace)> {
    let src = &spec.source;
    let (table, dropped) = src.table.drop_non_finite_rows();
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing values", src.name);
    }
    let stats = fit_norm(&table)?;
    let normalized = apply_norm(&table, &stats)?;
    let pairs = make_windows(&normalized, spec.input_len, horizon, src.train_stride)
        .context(|| format!("windowing `{}`", src.name))?;
    let shape = spec.shape(&table, horizon)?;
    let init = init_params(&shape, spec.seed)?;
    let cfg = spec.train_config(&spec.pretrain);
    log::info!(
        "pretraining on `{}`: {} windows, horizon {horizon}, {} epochs",
        src.name,
        pairs.len(),
        cfg.epochs
    );
    let trace = train(&init, &pairs, &cfg).context(|| format!("pretraining on `{}`", src.name))?;
    let ckpt = Checkpoint {
        params: trace.params.clone(),
        norm: stats,
        feature_names: table.feature_names().to_vec(),
        target_names: table.target_names().to_vec(),
        provenance: Provenance {
            config_digest: spec.config_digest.clone(),
            epochs: trace.epoch_loss.len(),
            final_loss: trace.final_loss(),
            seed: spec.seed,
        },
    };
    Ok((ckpt, trace))
}

fn fit_and_score(
    mode: Mode,
    init: &Seq2SeqParams,
    data: TargetWindows,
    cfg: &TrainConfig,
    name: &str,
) -> Result<TargetRun> {
    log::info!(
        "{} on `{name}`: {} training windows, horizon {}, {} epochs",
        mode.as_str(),
        data.train.len(),
        init.shape().horizon,
        cfg.epochs
    );
    let trace =
        train(init, &data.train, cfg).context(|| format!("{} on `{name}`", mode.as_str()))?;
    let forecasts = forecast_windows(&trace.params, &data.test, &data.stats, &data.target_names)?;
    let report = report_from_forecasts(init.shape().horizon, &forecasts)?;
    Ok(TargetRun {
        mode,
        trace,
        report,
        forecasts,
        data,
    })
}

/// Initializes every parameter from `ckpt` and fine-tunes on the target
/// training split. The horizon is the checkpoint's.
pub fn adapt(spec: &ExperimentSpec, ckpt: &Checkpoint) -> Result<TargetRun> {
    let shape = *ckpt.shape();
    let data = target_windows(spec, shape.input_len, shape.horizon)?;
    check_target_fits(ckpt, &data, spec.feature_map.is_some())?;
    fit_and_score(
        Mode::Adapt,
        &ckpt.params,
        data,
        &spec.train_config(&spec.finetune),
        &spec.target.name,
    )
}

fn check_target_fits(ckpt: &Checkpoint, data: &TargetWindows, mapped: bool) -> Result<()> {
    let shape = ckpt.shape();
    let d = data.feature_names.len();
    let p = data.target_names.len();
    if d != shape.input_dim {
        let hint = if mapped {
            ""
        } else {
            "; supply a feature map to align them"
        };
        return Err(Error::Config(format!(
            "checkpoint takes d={} input features but the target provides d={d}{hint}",
            shape.input_dim
        )));
    }
    if p != shape.output_dim {
        return Err(Error::Config(format!(
            "checkpoint predicts p={} targets but the target domain has p={p}",
            shape.output_dim
        )));
    }
    Ok(())
}

/// Trains a freshly initialized model on the target training split only.
pub fn scratch(spec: &ExperimentSpec, horizon: usize) -> Result<TargetRun> {
    let data = target_windows(spec, spec.input_len, horizon)?;
    let shape = ModelShape::new(
        data.feature_names.len(),
        data.target_names.len(),
        spec.hidden,
        spec.input_len,
        horizon,
    )?;
    let init = init_params(&shape, spec.seed)?;
    fit_and_score(
        Mode::Scratch,
        &init,
        data,
        &spec.train_config(&spec.scratch),
        &spec.target.name,
    )
}

/// Scores a stored model on the target test split without training.
pub fn evaluate(
    spec: &ExperimentSpec,
    ckpt: &Checkpoint,
) -> Result<(EvalReport, Vec<WindowForecast>)> {
    let shape = ckpt.shape();
    let data = target_windows(spec, shape.input_len, shape.horizon)?;
    check_target_fits(ckpt, &data, spec.feature_map.is_some())?;
    let forecasts = forecast_windows(&ckpt.params, &data.test, &data.stats, &data.target_names)?;
    let report = report_from_forecasts(shape.horizon, &forecasts)?;
    Ok((report, forecasts))
}

/// Everything produced for one horizon by [`compare`].
#[derive(Clone, Debug)]
pub struct HorizonResult {
    pub horizon: usize,
    pub pretrained: Checkpoint,
    pub pretrain_trace: TrainTrace,
    pub adapt: TargetRun,
    pub scratch: TargetRun,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub dataset: String,
    pub mode: &'static str,
    pub horizon_steps: usize,
    pub cvrmse_pct: f64,
    pub nmbe_pct: f64,
    pub mape_pct: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub dataset: String,
    pub horizon_steps: usize,
    pub scratch_rmse: f64,
    pub adapt_rmse: f64,
    /// `100 · (scratch − adapt) / scratch`
    pub rmse_improvement_pct: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub source: String,
    pub dataset: String,
    pub horizons: Vec<HorizonResult>,
}

pub const COMPARE_HEADER: [&str; 7] = [
    "dataset",
    "mode",
    "horizon_steps",
    "cvrmse_pct",
    "nmbe_pct",
    "mape_pct",
    "rmse",
];

pub const IMPROVEMENT_HEADER: [&str; 5] = [
    "dataset",
    "horizon_steps",
    "scratch_rmse",
    "adapt_rmse",
    "rmse_improvement_pct",
];

pub fn rmse_improvement_pct(scratch_rmse: f64, adapt_rmse: f64) -> f64 {
    100.0 * (scratch_rmse - adapt_rmse) / scratch_rmse
}

impl Comparison {
    /// Scratch then adapt for each horizon, in horizon order.
    pub fn rows(&self) -> Vec<CompareRow> {
        let row = |run: &TargetRun| CompareRow {
            dataset: self.dataset.clone(),
            mode: run.mode.as_str(),
            horizon_steps: run.report.horizon_steps,
            cvrmse_pct: run.report.cvrmse,
            nmbe_pct: run.report.nmbe,
            mape_pct: run.report.mape,
            rmse: run.report.rmse,
        };
        self.horizons
            .iter()
            .flat_map(|h| [row(&h.scratch), row(&h.adapt)])
            .collect()
    }

    pub fn improvements(&self) -> Vec<ImprovementRow> {
        self.horizons
            .iter()
            .map(|h| ImprovementRow {
                dataset: self.dataset.clone(),
                horizon_steps: h.horizon,
                scratch_rmse: h.scratch.report.rmse,
                adapt_rmse: h.adapt.report.rmse,
                rmse_improvement_pct: rmse_improvement_pct(
                    h.scratch.report.rmse,
                    h.adapt.report.rmse,
                ),
            })
            .collect()
    }

    pub fn csv(&self) -> Vec<u8> {
        crate::io::csv_bytes(
            &COMPARE_HEADER,
            self.rows().into_iter().map(|r| {
                vec![
                    r.dataset,
                    r.mode.to_string(),
                    r.horizon_steps.to_string(),
                    r.cvrmse_pct.to_string(),
                    r.nmbe_pct.to_string(),
                    r.mape_pct.to_string(),
                    r.rmse.to_string(),
                ]
            }),
        )
    }

    pub fn improvement_csv(&self) -> Vec<u8> {
        crate::io::csv_bytes(
            &IMPROVEMENT_HEADER,
            self.improvements().into_iter().map(|r| {
                vec![
                    r.dataset,
                    r.horizon_steps.to_string(),
                    r.scratch_rmse.to_string(),
                    r.adapt_rmse.to_string(),
                    r.rmse_improvement_pct.to_string(),
                ]
            }),
        )
    }

    pub fn json(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Doc<'a> {
            source: &'a str,
            dataset: &'a str,
            rows: Vec<CompareRow>,
            improvements: Vec<ImprovementRow>,
            window_digests: Vec<(usize, &'a str)>,
        }
        let doc = Doc {
            source: &self.source,
            dataset: &self.dataset,
            rows: self.rows(),
            improvements: self.improvements(),
            window_digests: self
                .horizons
                .iter()
                .map(|h| (h.horizon, h.scratch.data.digest.as_str()))
                .collect(),
        };
        let mut out = serde_json::to_vec_pretty(&doc).expect("comparison serializes");
        out.push(b'\n');
        out
    }

    /// Fixed-width table in the order CVRMSE, NMBE, MAPE, RMSE.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:<8} {:>8} {:>10} {:>10} {:>10} {:>10}\n",
            "dataset", "mode", "horizon", "CVRMSE(%)", "NMBE(%)", "MAPE(%)", "RMSE"
        );
        for r in self.rows() {
            s.push_str(&format!(
                "{:<16} {:<8} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10.4}\n",
                r.dataset, r.mode, r.horizon_steps, r.cvrmse_pct, r.nmbe_pct, r.mape_pct, r.rmse
            ));
        }
        s
    }
}

/// Pretrain, adapt and scratch for one horizon.
pub fn run_horizon(spec: &ExperimentSpec, horizon: usize) -> Result<HorizonResult> {
    let (pretrained, pretrain_trace) = pretrain(spec, horizon)?;
    let adapt_run = adapt(spec, &pretrained)?;
    let scratch_run = scratch(spec, horizon)?;
    if adapt_run.data.digest != scratch_run.data.digest {
        return Err(Error::Usage(format!(
            "adapt and scratch saw different target windows at horizon {horizon}"
        )));
    }
    Ok(HorizonResult {
        horizon,
        pretrained,
        pretrain_trace,
        adapt: adapt_run,
        scratch: scratch_run,
    })
}

/// Runs every horizon of `spec`, in parallel on the current rayon pool.
pub fn compare(spec: &ExperimentSpec) -> Result<Comparison> {
    spec.validate()?;
    spec.check_compatible()?;
    let horizons = spec
        .horizons
        .par_iter()
        .map(|&h| run_horizon(spec, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        source: spec.source.name.clone(),
        dataset: spec.target.name.clone(),
        horizons,
    })
}

/// Loss trace as `epoch,loss` CSV.
pub fn loss_csv(trace: &TrainTrace) -> Vec<u8> {
    crate::io::csv_bytes(
        &["epoch", "loss"],
        trace
            .epoch_loss
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]),
    )
}

/// Per-step forecasts in original units, stamped with the forecast time.
pub fn predictions_csv(
    forecasts: &[WindowForecast],
    target_names: &[String],
    input_len: usize,
    sample_period: i64,
) -> Vec<u8> {
    let mut rows = Vec::new();
    for f in forecasts {
        for step in 0..f.truth.rows() {
            let ts = f.t_first + (input_len + step) as i64 * sample_period;
            for (j, name) in target_names.iter().enumerate() {
                rows.push(vec![
                    ts.to_string(),
                    (step + 1).to_string(),
                    name.clone(),
                    f.truth.get(step, j).to_string(),
                    f.prediction.get(step, j).to_string(),
                ]);
            }
        }
    }
    crate::io::csv_bytes(
        &[
            "timestamp",
            "horizon_step",
            "variable",
            "truth",
            "prediction",
        ],
        rows,
    )
}
