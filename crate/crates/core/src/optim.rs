//! Mini-batch Adam over the mean-squared sequence loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::SequencePair;
use crate::error::{Error, Result};
use crate::model::{accumulate_gradients, ForcingMode, Seq2SeqParams};
use crate::params::BLOCK_NAMES;
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub forcing: ForcingMode,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: Option<f64>,
    /// Parameter blocks excluded from updates (ablations only).
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            forcing: ForcingMode::NonTeacherForced,
            clip_norm: None,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        for name in &self.freeze {
            if !BLOCK_NAMES.contains(&name.as_str()) {
                return bad(format!("unknown parameter block `{name}` in freeze list"));
            }
        }
        Ok(())
    }

    fn frozen_mask(&self) -> [bool; BLOCK_NAMES.len()] {
        core::array::from_fn(|i| self.freeze.iter().any(|n| n == BLOCK_NAMES[i]))
    }
}

/// Adam moment estimates, aligned with the flat parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    /// Mean per-sample training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Seconds spent in each epoch, as reported by the clock passed to
    /// [`train_with_clock`]; zeros for [`train`].
    pub epoch_seconds: Vec<f64>,
    pub params: Seq2SeqParams,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Mean loss and mean gradient over `batch`, summed in batch order.
pub fn batch_loss_grad(
    params: &Seq2SeqParams,
    batch: &[SequencePair],
    forcing: ForcingMode,
) -> Result<(f64, Seq2SeqParams)> {
    let mut grads = Seq2SeqParams::zeros(params.shape());
    let loss = accumulate_batch(params, batch.iter(), forcing, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_batch<'a>(
    params: &Seq2SeqParams,
    batch: impl ExactSizeIterator<Item = &'a SequencePair>,
    forcing: ForcingMode,
    grads: &mut Seq2SeqParams,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Usage(
            "batch must contain at least one sample".into(),
        ));
    }
    let mut loss = 0.0;
    for sample in batch {
        loss += accumulate_gradients(params, sample, forcing, grads)?;
    }
    let inv = 1.0 / n as f64;
    grads.scale(inv);
    grads.check_finite()?;
    Ok(loss * inv)
}

/// Bias-corrected Adam update of one contiguous slice of parameters.
fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m).zip(v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
    }
}

/// Applies one Adam step to every block not listed in `cfg.freeze`.
pub fn adam_step(
    params: &mut Seq2SeqParams,
    grads: &Seq2SeqParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = params.num_params();
    if grads.shape() != params.shape() || state.m.len() != n || state.v.len() != n {
        return Err(Error::dim("adam state", n, state.m.len()));
    }
    grads.check_finite()?;
    let frozen = cfg.frozen_mask();
    state.t += 1;
    let mut offset = 0;
    for ((i, block), grad) in params
        .blocks_mut()
        .into_iter()
        .enumerate()
        .zip(grads.blocks())
    {
        let range = offset..offset + block.len();
        offset = range.end;
        if frozen[i] {
            continue;
        }
        adam_update(
            block.as_mut_slice(),
            grad.as_slice(),
            &mut state.m[range.clone()],
            &mut state.v[range],
            state.t,
            cfg,
        );
    }
    Ok(())
}

fn global_norm(grads: &Seq2SeqParams) -> f64 {
    libm::sqrt(
        grads
            .blocks()
            .iter()
            .flat_map(|b| b.as_slice())
            .map(|g| g * g)
            .sum(),
    )
}

/// Source of wall-clock readings for per-epoch timing.
pub trait Clock {
    fn now_seconds(&mut self) -> f64;
}

/// Clock that always reads zero.
pub struct NoClock;

impl Clock for NoClock {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }
}

/// Runs `cfg.epochs` epochs of mini-batch Adam from `init`.
///
/// Sample order is reshuffled every epoch from a stream seeded by
/// `cfg.seed`; the last partial batch is kept. The result depends only on
/// `(init, dataset, cfg)`.
pub fn train(
    init: &Seq2SeqParams,
    dataset: &[SequencePair],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    train_with_clock(init, dataset, cfg, &mut NoClock)
}

pub fn train_with_clock(
    init: &Seq2SeqParams,
    dataset: &[SequencePair],
    cfg: &TrainConfig,
    clock: &mut dyn Clock,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = init.clone();
    let mut state = AdamState::new(params.num_params());
    let mut grads = Seq2SeqParams::zeros(params.shape());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stream(cfg.seed, Stream::Shuffle);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let started = clock.now_seconds();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            let loss = accumulate_batch(
                &params,
                batch.iter().map(|&i| &dataset[i]),
                cfg.forcing,
                &mut grads,
            )
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, step },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            if let Some(max) = cfg.clip_norm {
                let norm = global_norm(&grads);
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        let mean = total / dataset.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        epoch_loss.push(mean);
        epoch_seconds.push(clock.now_seconds() - started);
    }
    Ok(TrainTrace {
        epoch_loss,
        epoch_seconds,
        params,
    })
}
