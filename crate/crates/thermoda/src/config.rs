//! TOML run configuration.
//!
//! Every field has a default, so an empty file describes the synthetic
//! transfer benchmark. Dataset paths are resolved relative to the config
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thermoda_core::synth::{SynthTarget, HVAC, OUTDOOR_TEMP, TIME_OF_DAY};
use thermoda_core::{
    resample, synth_building, FeatureMap, FeatureSource, SynthParams, TimeSeriesTable, TrainConfig,
};

use crate::error::{Error, Result, ResultExt};
use crate::io::{load_csv, Schema};
use crate::pipeline::{DomainData, ExperimentSpec};

const SOURCE_SEED_TAG: u64 = 0x534f_5552_4345;
const TARGET_SEED_TAG: u64 = 0x5441_5247_4554;

/// Where one domain's data comes from and how it is windowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// CSV file; requires `schema`.
    pub path: Option<PathBuf>,
    /// Seed of the synthetic generator; derived from the run seed when
    /// absent.
    pub synth_seed: Option<u64>,
    /// Input columns to keep from a synthetic building, in order.
    pub features: Option<Vec<String>>,
    /// Block-mean resampling to this period, in seconds.
    pub resample_secs: Option<i64>,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub schema: Option<Schema>,
    /// Generate a synthetic building instead of reading a file.
    pub synthetic: Option<SynthParams>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "dataset".into(),
            path: None,
            synth_seed: None,
            features: None,
            resample_secs: None,
            train_stride: 1,
            eval_stride: 1,
            schema: None,
            synthetic: None,
        }
    }
}

impl DatasetConfig {
    fn validate(&self, section: &str) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("[{section}] {m}")));
        match (&self.path, &self.synthetic) {
            (Some(_), Some(_)) => return bad("set either `path` or `synthetic`, not both".into()),
            (None, None) => return bad("one of `path` or `synthetic` is required".into()),
            (Some(_), None) if self.schema.is_none() => {
                return bad("`path` requires a `schema` table".into())
            }
            (None, Some(p)) => p.validate().context(|| format!("[{section}.synthetic]"))?,
            _ => {}
        }
        if self.train_stride == 0 || self.eval_stride == 0 {
            return bad("train_stride and eval_stride must be >= 1".into());
        }
        if let Some(r) = self.resample_secs {
            if r <= 0 {
                return bad(format!("resample_secs must be > 0, got {r}"));
            }
        }
        Ok(())
    }

    /// Loads or generates the table. `base` resolves relative paths.
    pub fn load(&self, run_seed: u64, tag: u64, base: &Path) -> Result<TimeSeriesTable> {
        let table = match (&self.path, &self.synthetic) {
            (Some(path), _) => {
                let schema = self.schema.as_ref().ok_or_else(|| {
                    Error::Config(format!("dataset `{}` needs a schema", self.name))
                })?;
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                load_csv(&full, schema)?
            }
            (None, Some(params)) => {
                let seed = self.synth_seed.unwrap_or(run_seed ^ tag);
                let table = synth_building(params, seed)?;
                match &self.features {
                    Some(f) => table.with_roles(f.clone(), table.target_names().to_vec())?,
                    None => table,
                }
            }
            (None, None) => {
                return Err(Error::Config(format!(
                    "dataset `{}` has no data source",
                    self.name
                )))
            }
        };
        match self.resample_secs {
            Some(period) if period != table.sample_period() => {
                log::info!(
                    "{}: resampling from {} s to {period} s by block means",
                    self.name,
                    table.sample_period()
                );
                Ok(resample(&table, period).context(|| format!("resampling `{}`", self.name))?)
            }
            _ => {
                log::info!(
                    "{}: used at its native {} s period",
                    self.name,
                    table.sample_period()
                );
                Ok(table)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds synthetic data, initialization and shuffling. Overrides the
    /// `seed` of every training section.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub hidden: usize,
    pub input_len: usize,
    /// Forecast horizons in steps; one model is trained per horizon.
    pub horizons: Vec<usize>,
    pub split_ratio: f64,
    /// Target column (or `@zero`) feeding each source input feature.
    pub feature_map: Option<Vec<String>>,
    pub source: DatasetConfig,
    pub target: DatasetConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Large, heavier building used as the source domain.
pub fn source_building() -> SynthParams {
    SynthParams {
        a: 0.92,
        b: 0.06,
        c: 1.4,
        noise: 0.1,
        t0: 14.0,
        outdoor_mean: 8.0,
        outdoor_amplitude: 6.0,
        length: 30_000,
        ..SynthParams::default()
    }
}

/// Small, lighter building with a warmer climate and shorter occupancy.
pub fn target_building() -> SynthParams {
    SynthParams {
        a: 0.88,
        b: 0.08,
        c: 1.8,
        noise: 0.1,
        t0: 18.0,
        outdoor_mean: 13.0,
        outdoor_amplitude: 5.0,
        outdoor_phase: 2.3,
        occupied_start_hour: 8.0,
        occupied_end_hour: 18.0,
        setback: 0.3,
        length: 2_000,
        // 2020-01-06T00:00:00Z
        start_epoch: 1_578_268_800,
        ..SynthParams::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::transfer_benchmark()
    }
}

impl RunConfig {
    /// Temperature-to-temperature transfer between two synthetic buildings.
    pub fn transfer_benchmark() -> Self {
        let pretrain = TrainConfig {
            epochs: 12,
            ..TrainConfig::default()
        };
        let target_cfg = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("thermoda-out"),
            workers: 0,
            hidden: 12,
            input_len: 24,
            horizons: vec![1, 8, 16, 24],
            split_ratio: 0.67,
            feature_map: None,
            source: DatasetConfig {
                name: "source".into(),
                synthetic: Some(source_building()),
                train_stride: 5,
                ..DatasetConfig::default()
            },
            target: DatasetConfig {
                name: "target".into(),
                synthetic: Some(target_building()),
                train_stride: 6,
                ..DatasetConfig::default()
            },
            pretrain,
            finetune: target_cfg.clone(),
            scratch: target_cfg,
            base_dir: PathBuf::from("."),
        }
    }

    /// Energy-pretrained source adapted to a temperature target that lacks
    /// the day-of-week input.
    pub fn cross_task_benchmark() -> Self {
        let mut cfg = RunConfig::transfer_benchmark();
        cfg.source.name = "source_energy".into();
        cfg.source.synthetic = Some(SynthParams {
            target: SynthTarget::Energy,
            ..source_building()
        });
        cfg.target.name = "target_temp".into();
        cfg.target.features = Some(vec![OUTDOOR_TEMP.into(), HVAC.into(), TIME_OF_DAY.into()]);
        cfg.feature_map = Some(vec![
            OUTDOOR_TEMP.into(),
            HVAC.into(),
            FeatureSource::ZERO_TOKEN.into(),
            TIME_OF_DAY.into(),
        ]);
        cfg
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_toml_str(&text, base).map_err(|e| e.context(path.display().to_string()))
    }

    /// Fully materialized configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "`horizons` must be a non-empty list of positive step counts".into(),
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "`split_ratio` must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.hidden == 0 || self.input_len == 0 {
            return Err(Error::Config(
                "`hidden` and `input_len` must be >= 1".into(),
            ));
        }
        if let Some(map) = &self.feature_map {
            if map.is_empty() {
                return Err(Error::Config("`feature_map` must not be empty".into()));
            }
        }
        self.source.validate("source")?;
        self.target.validate("target")?;
        for (name, cfg) in [
            ("pretrain", &self.pretrain),
            ("finetune", &self.finetune),
            ("scratch", &self.scratch),
        ] {
            cfg.validate().context(|| format!("[{name}]"))?;
        }
        Ok(())
    }

    pub fn source_table(&self) -> Result<TimeSeriesTable> {
        self.source.load(self.seed, SOURCE_SEED_TAG, &self.base_dir)
    }

    pub fn target_table(&self) -> Result<TimeSeriesTable> {
        self.target.load(self.seed, TARGET_SEED_TAG, &self.base_dir)
    }

    /// Loads both datasets and assembles the experiment.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        self.validate()?;
        let spec = ExperimentSpec {
            source: DomainData {
                name: self.source.name.clone(),
                table: self.source_table()?,
                train_stride: self.source.train_stride,
                eval_stride: self.source.eval_stride,
            },
            target: DomainData {
                name: self.target.name.clone(),
                table: self.target_table()?,
                train_stride: self.target.train_stride,
                eval_stride: self.target.eval_stride,
            },
            feature_map: self.feature_map.as_ref().map(|m| FeatureMap::parse(m)),
            hidden: self.hidden,
            input_len: self.input_len,
            horizons: self.horizons.clone(),
            split_ratio: self.split_ratio,
            seed: self.seed,
            pretrain: self.pretrain.clone(),
            finetune: self.finetune.clone(),
            scratch: self.scratch.clone(),
            config_digest: self.digest(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let cfg = RunConfig::from_toml_str("", ".").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn echoed_config_parses_back() {
        for cfg in [
            RunConfig::transfer_benchmark(),
            RunConfig::cross_task_benchmark(),
        ] {
            let text = cfg.to_toml();
            assert_eq!(RunConfig::from_toml_str(&text, ".").unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("learning_rate = 1.0", ".").is_err());
        assert!(RunConfig::from_toml_str("[pretrain]\nlr = 1.0", ".").is_err());
    }

    #[test]
    fn partial_synthetic_section_keeps_defaults() {
        let cfg = RunConfig::from_toml_str("[target.synthetic]\na = 0.5\n", ".").unwrap();
        let p = cfg.target.synthetic.unwrap();
        assert_eq!(p.a, 0.5);
        assert_eq!(p.length, SynthParams::default().length);
    }
}
