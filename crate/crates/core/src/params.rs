//! Fixed-order block view over model parameters, plus initialization.
//!
//! Blocks are always enumerated in [`BLOCK_NAMES`] order: encoder gate
//! weights, encoder gate biases, decoder gate weights, decoder gate biases,
//! dense head weight, dense head bias. Optimizer state, gradients and
//! checkpoint payloads all use this order.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelShape, Seq2SeqParams, FORGET};
use crate::rng::{stream, Stream};

pub const BLOCK_COUNT: usize = 18;

pub const BLOCK_NAMES: [&str; BLOCK_COUNT] = [
    "encoder.w_input",
    "encoder.w_forget",
    "encoder.w_cell",
    "encoder.w_output",
    "encoder.b_input",
    "encoder.b_forget",
    "encoder.b_cell",
    "encoder.b_output",
    "decoder.w_input",
    "decoder.w_forget",
    "decoder.w_cell",
    "decoder.w_output",
    "decoder.b_input",
    "decoder.b_forget",
    "decoder.b_cell",
    "decoder.b_output",
    "head.w",
    "head.b",
];

/// Borrowed, ordered view of every parameter block.
#[derive(Debug)]
pub struct ParamView<'a> {
    pub names: &'static [&'static str],
    pub blocks: [&'a Matrix; BLOCK_COUNT],
    pub total_len: usize,
}

impl ParamView<'_> {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len);
        for b in self.blocks {
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn block(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.blocks[i])
    }
}

impl Seq2SeqParams {
    pub fn view(&self) -> ParamView<'_> {
        let blocks = self.blocks();
        ParamView {
            names: &BLOCK_NAMES,
            total_len: blocks.iter().map(|b| b.len()).sum(),
            blocks,
        }
    }

    pub fn blocks(&self) -> [&Matrix; BLOCK_COUNT] {
        let [ew0, ew1, ew2, ew3] = &self.encoder.w;
        let [eb0, eb1, eb2, eb3] = &self.encoder.b;
        let [dw0, dw1, dw2, dw3] = &self.decoder.w;
        let [db0, db1, db2, db3] = &self.decoder.b;
        [
            ew0,
            ew1,
            ew2,
            ew3,
            eb0,
            eb1,
            eb2,
            eb3,
            dw0,
            dw1,
            dw2,
            dw3,
            db0,
            db1,
            db2,
            db3,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; BLOCK_COUNT] {
        let [ew0, ew1, ew2, ew3] = &mut self.encoder.w;
        let [eb0, eb1, eb2, eb3] = &mut self.encoder.b;
        let [dw0, dw1, dw2, dw3] = &mut self.decoder.w;
        let [db0, db1, db2, db3] = &mut self.decoder.b;
        [
            ew0,
            ew1,
            ew2,
            ew3,
            eb0,
            eb1,
            eb2,
            eb3,
            dw0,
            dw1,
            dw2,
            dw3,
            db0,
            db1,
            db2,
            db3,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.view().flatten()
    }

    /// Rebuilds parameters from a flat vector in block order.
    pub fn unflatten(shape: &ModelShape, flat: &[f64]) -> Result<Self> {
        shape.validate()?;
        let mut params = Seq2SeqParams::zeros(shape);
        params.assign_flat(flat)?;
        Ok(params)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::dim("flat parameter vector", total, flat.len()));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block
                .as_mut_slice()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Errors with the first block that holds a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, block) in BLOCK_NAMES.iter().zip(self.blocks()) {
            if !block.is_finite() {
                return Err(Error::NonFinite {
                    block: name.to_string(),
                });
            }
        }
        Ok(())
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &Seq2SeqParams, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Fresh parameters for `shape`.
///
/// Weights are uniform on `[-1/√fan_in, 1/√fan_in]`, with `fan_in = n_in + c`
/// for gate weights and `c` for the dense head. Biases are zero except the
/// forget-gate biases of both layers, which start at 1.
pub fn init_params(shape: &ModelShape, seed: u64) -> Result<Seq2SeqParams> {
    shape.validate()?;
    let mut params = Seq2SeqParams::zeros(shape);
    let mut rng = stream(seed, Stream::Init);

    let mut fill = |m: &mut Matrix| {
        let bound = 1.0 / libm::sqrt(m.cols() as f64);
        for v in m.as_mut_slice() {
            *v = rng.random_range(-bound..=bound);
        }
    };
    for layer in [&mut params.encoder, &mut params.decoder] {
        layer.w.iter_mut().for_each(&mut fill);
        layer.b[FORGET].fill(1.0);
    }
    fill(&mut params.head_w);
    Ok(params)
}
