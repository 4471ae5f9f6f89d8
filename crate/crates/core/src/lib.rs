//! Deterministic LSTM sequence-to-sequence forecasting for building thermal
//! time series, with parameter transfer and whole-model fine-tuning.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure numerics:
//! matrices, the encoder/decoder model with hand-derived backpropagation
//! through time, Adam, table transforms and windowing, a seeded synthetic
//! building generator and the evaluation metrics. File formats, checkpoints
//! and the command line live in the `thermoda` crate.
//!
//! ```
//! use thermoda_core::{init_params, forward, ForcingMode, Matrix, ModelShape};
//!
//! let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
//! let params = init_params(&shape, 7).unwrap();
//! let x = Matrix::zeros(3, 2);
//! let y = forward(&params, &x, &[0.5], 2, ForcingMode::NonTeacherForced, None).unwrap();
//! assert_eq!((y.rows(), y.cols()), (2, 1));
//! ```

#![no_std]

extern crate alloc;

pub mod data;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synth;

pub use data::{
    apply_norm, chrono_split, denormalize, fit_norm, make_windows, remap_features, resample,
    FeatureMap, FeatureSource, NormStats, SequencePair, TimeSeriesTable,
};
pub use error::{Error, Result};
pub use linalg::{matmul, sigmoid, tanh, Matrix};
pub use metrics::{cvrmse, evaluate, mape, nmbe, rmse, EvalReport};
pub use model::{
    backward, decode, encode, forward, lstm_cell_step, ForcingMode, LstmParams, LstmState,
    ModelShape, Seq2SeqParams,
};
pub use optim::{adam_step, batch_loss_grad, train, AdamState, TrainConfig, TrainTrace};
pub use params::{init_params, ParamView};
pub use synth::{synth_building, SynthParams, SynthTarget};
