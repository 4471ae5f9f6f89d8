//! LSTM encoder/decoder regressor.
//!
//! The encoder folds a `K × d` input window into its final `(h, cell)` state.
//! That state initializes the decoder, whose first input is the last observed
//! target vector `y0`; every later decoder input is either the previous
//! prediction (non-teacher forcing) or the previous ground-truth value
//! (teacher forcing). A linear dense head maps each decoder hidden state to a
//! `p`-vector prediction.
//!
//! Gradients are derived by hand (backpropagation through time), including
//! the path through fed-back predictions.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::SequencePair;
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, tanh, Matrix};

/// Architectural sizes of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Input features per step (`d`).
    pub input_dim: usize,
    /// Target variables per step (`p`).
    pub output_dim: usize,
    /// LSTM units in each of the encoder and decoder (`c`).
    pub hidden: usize,
    /// Encoder window length in steps (`K`).
    pub input_len: usize,
    /// Decoder horizon in steps (`L`).
    pub horizon: usize,
}

impl ModelShape {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        hidden: usize,
        input_len: usize,
        horizon: usize,
    ) -> Result<Self> {
        let shape = ModelShape {
            input_dim,
            output_dim,
            hidden,
            input_len,
            horizon,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden", self.hidden),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(alloc::format!(
                    "model shape field `{name}` must be >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// Decoder step `l` consumes its own prediction from step `l - 1`.
    #[default]
    NonTeacherForced,
    /// Decoder step `l` consumes the ground truth from step `l - 1`.
    TeacherForced,
}

/// Gate order used for weight blocks.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];
pub(crate) const FORGET: usize = 1;

/// Weights of one LSTM layer, one block per gate. `w[g]` is
/// `hidden × (n_in + hidden)` acting on `[input; h_prev]`, `b[g]` is
/// `hidden × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: [Matrix; 4],
    pub b: [Matrix; 4],
}

impl LstmParams {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        LstmParams {
            w: core::array::from_fn(|_| Matrix::zeros(hidden, n_in + hidden)),
            b: core::array::from_fn(|_| Matrix::zeros(hidden, 1)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b[0].rows()
    }

    pub fn input_width(&self) -> usize {
        self.w[0].cols() - self.hidden()
    }
}

/// Hidden and cell state of an LSTM layer. The encoder's final state is the
/// fixed-size summary handed to the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }
}

/// All learnable parameters of the encoder/decoder model.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqParams {
    shape: ModelShape,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// Dense head weight, `p × c`.
    pub head_w: Matrix,
    /// Dense head bias, `p × 1`.
    pub head_b: Matrix,
}

impl Seq2SeqParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        Seq2SeqParams {
            shape: *shape,
            encoder: LstmParams::zeros(shape.input_dim, shape.hidden),
            decoder: LstmParams::zeros(shape.output_dim, shape.hidden),
            head_w: Matrix::zeros(shape.output_dim, shape.hidden),
            head_b: Matrix::zeros(shape.output_dim, 1),
        }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    /// Same parameters, relabelled for a different decoder horizon. The
    /// horizon does not change any parameter dimension.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.shape.horizon = horizon;
        self
    }
}

/// One LSTM step: `z = [input; prev.h]`, gates `i, f, o = σ(W z + b)`,
/// `g = tanh(W z + b)`, `cell' = f ⊙ cell + i ⊙ g`, `h' = o ⊙ tanh(cell')`.
pub fn lstm_cell_step(params: &LstmParams, input: &[f64], prev: &LstmState) -> Result<LstmState> {
    let hidden = params.hidden();
    if input.len() != params.input_width() {
        return Err(Error::dim(
            "lstm_cell_step input",
            params.input_width(),
            input.len(),
        ));
    }
    if prev.h.len() != hidden || prev.cell.len() != hidden {
        return Err(Error::dim("lstm_cell_step state", hidden, prev.h.len()));
    }
    let mut trace = LayerTrace::new(params, prev, 1);
    trace.push(params, input);
    Ok(trace.final_state())
}

/// Activations of one LSTM layer over a sequence, kept for the backward
/// pass. Index 0 of `h` and `cell` is the initial state.
struct LayerTrace {
    n_in: usize,
    hidden: usize,
    steps: usize,
    z: Vec<f64>,
    /// Post-activation gates, `4 × hidden` per step in `GATES` order.
    gates: Vec<f64>,
    h: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
}

impl LayerTrace {
    fn new(params: &LstmParams, init: &LstmState, capacity: usize) -> Self {
        let hidden = params.hidden();
        let n_in = params.input_width();
        let mut h = Vec::with_capacity((capacity + 1) * hidden);
        let mut cell = Vec::with_capacity((capacity + 1) * hidden);
        h.extend_from_slice(&init.h);
        cell.extend_from_slice(&init.cell);
        LayerTrace {
            n_in,
            hidden,
            steps: 0,
            z: Vec::with_capacity(capacity * (n_in + hidden)),
            gates: Vec::with_capacity(capacity * 4 * hidden),
            h,
            cell,
            tanh_cell: Vec::with_capacity(capacity * hidden),
        }
    }

    fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }

    fn cell_at(&self, t: usize) -> &[f64] {
        &self.cell[t * self.hidden..(t + 1) * self.hidden]
    }

    fn last_h(&self) -> &[f64] {
        self.h_at(self.steps)
    }

    fn final_state(&self) -> LstmState {
        LstmState {
            h: self.h_at(self.steps).to_vec(),
            cell: self.cell_at(self.steps).to_vec(),
        }
    }

    fn push(&mut self, p: &LstmParams, input: &[f64]) {
        let hc = self.hidden;
        let t = self.steps;
        let z_start = self.z.len();
        self.z.extend_from_slice(input);
        self.z.extend_from_slice(&self.h[t * hc..(t + 1) * hc]);
        let z_len = self.n_in + hc;

        let g_start = self.gates.len();
        self.gates.resize(g_start + 4 * hc, 0.0);
        {
            let z = &self.z[z_start..z_start + z_len];
            let gates = &mut self.gates[g_start..];
            for (g, block) in gates.chunks_exact_mut(hc).enumerate() {
                for (r, out) in block.iter_mut().enumerate() {
                    let pre = p.b[g].as_slice()[r] + dot(p.w[g].row(r), z);
                    *out = if g == 2 { tanh(pre) } else { sigmoid(pre) };
                }
            }
        }
        for j in 0..hc {
            let i = self.gates[g_start + j];
            let f = self.gates[g_start + hc + j];
            let g = self.gates[g_start + 2 * hc + j];
            let o = self.gates[g_start + 3 * hc + j];
            let c = f * self.cell[t * hc + j] + i * g;
            let tc = tanh(c);
            self.cell.push(c);
            self.tanh_cell.push(tc);
            self.h.push(o * tc);
        }
        self.steps += 1;
    }

    /// Backpropagates through step `t`. On entry `dh`/`dc` hold the loss
    /// gradient w.r.t. `h_{t+1}`/`cell_{t+1}`; on exit they hold the gradient
    /// w.r.t. `h_t`/`cell_t`. The input gradient is written to `dinput` when
    /// requested.
    #[allow(clippy::too_many_arguments)]
    fn backward_step(
        &self,
        p: &LstmParams,
        t: usize,
        dh: &mut [f64],
        dc: &mut [f64],
        grads: &mut LstmParams,
        dz: &mut [f64],
        da: &mut [f64],
        dinput: Option<&mut [f64]>,
    ) {
        let hc = self.hidden;
        let gates = &self.gates[t * 4 * hc..(t + 1) * 4 * hc];
        let c_prev = self.cell_at(t);
        let tanh_c = &self.tanh_cell[t * hc..(t + 1) * hc];
        for j in 0..hc {
            let i = gates[j];
            let f = gates[hc + j];
            let g = gates[2 * hc + j];
            let o = gates[3 * hc + j];
            let tc = tanh_c[j];
            let d_o = dh[j] * tc;
            let d_cell = dc[j] + dh[j] * o * (1.0 - tc * tc);
            da[j] = d_cell * g * i * (1.0 - i);
            da[hc + j] = d_cell * c_prev[j] * f * (1.0 - f);
            da[2 * hc + j] = d_cell * i * (1.0 - g * g);
            da[3 * hc + j] = d_o * o * (1.0 - o);
            dc[j] = d_cell * f;
        }

        let z_len = self.n_in + hc;
        let z = &self.z[t * z_len..(t + 1) * z_len];
        dz.iter_mut().for_each(|v| *v = 0.0);
        for g in 0..4 {
            let dag = &da[g * hc..(g + 1) * hc];
            outer_acc(&mut grads.w[g], dag, z);
            for (b, &d) in grads.b[g].as_mut_slice().iter_mut().zip(dag) {
                *b += d;
            }
            matvec_t_acc(&p.w[g], dag, dz);
        }
        if let Some(dx) = dinput {
            dx.copy_from_slice(&dz[..self.n_in]);
        }
        dh.copy_from_slice(&dz[self.n_in..]);
    }
}

fn check_window(params: &Seq2SeqParams, x: &Matrix) -> Result<()> {
    let s = params.shape();
    if x.cols() != s.input_dim {
        return Err(Error::dim("input window width", s.input_dim, x.cols()));
    }
    if x.rows() != s.input_len {
        return Err(Error::dim("input window length", s.input_len, x.rows()));
    }
    Ok(())
}

fn run_encoder(params: &Seq2SeqParams, x: &Matrix) -> LayerTrace {
    let hidden = params.shape().hidden;
    let mut trace = LayerTrace::new(&params.encoder, &LstmState::zeros(hidden), x.rows());
    for k in 0..x.rows() {
        trace.push(&params.encoder, x.row(k));
    }
    trace
}

/// Folds the LSTM step over all `K` rows of `x` from a zero state.
pub fn encode(params: &Seq2SeqParams, x: &Matrix) -> Result<LstmState> {
    check_window(params, x)?;
    Ok(run_encoder(params, x).final_state())
}

struct DecoderRun {
    trace: LayerTrace,
    predictions: Matrix,
}

fn run_decoder(
    params: &Seq2SeqParams,
    init: &LstmState,
    y0: &[f64],
    horizon: usize,
    forcing: ForcingMode,
    truth: Option<&Matrix>,
) -> DecoderRun {
    let p = params.shape().output_dim;
    let mut trace = LayerTrace::new(&params.decoder, init, horizon);
    let mut predictions = Matrix::zeros(horizon, p);
    let mut input = y0.to_vec();
    for l in 0..horizon {
        trace.push(&params.decoder, &input);
        let out = predictions.row_mut(l);
        out.copy_from_slice(params.head_b.as_slice());
        matvec_acc(&params.head_w, trace.last_h(), out);
        match (forcing, truth) {
            (ForcingMode::TeacherForced, Some(t)) => input.copy_from_slice(t.row(l)),
            _ => input.copy_from_slice(predictions.row(l)),
        }
    }
    DecoderRun { trace, predictions }
}

fn check_decoder_args(
    params: &Seq2SeqParams,
    init: &LstmState,
    y0: &[f64],
    horizon: usize,
    forcing: ForcingMode,
    truth: Option<&Matrix>,
) -> Result<()> {
    let s = params.shape();
    if init.h.len() != s.hidden || init.cell.len() != s.hidden {
        return Err(Error::dim("decoder initial state", s.hidden, init.h.len()));
    }
    if y0.len() != s.output_dim {
        return Err(Error::dim("decoder y0", s.output_dim, y0.len()));
    }
    if horizon == 0 {
        return Err(Error::Usage("decoder horizon must be >= 1".to_string()));
    }
    match (forcing, truth) {
        (ForcingMode::TeacherForced, None) => Err(Error::Usage(
            "teacher forcing requires the ground-truth horizon".to_string(),
        )),
        (_, Some(t)) if t.rows() != horizon || t.cols() != s.output_dim => {
            Err(Error::dim("decoder ground truth rows", horizon, t.rows()))
        }
        _ => Ok(()),
    }
}

/// Recursively emits `horizon` predictions from an encoder state.
pub fn decode(
    params: &Seq2SeqParams,
    init: &LstmState,
    y0: &[f64],
    horizon: usize,
    forcing: ForcingMode,
    truth: Option<&Matrix>,
) -> Result<Matrix> {
    check_decoder_args(params, init, y0, horizon, forcing, truth)?;
    Ok(run_decoder(params, init, y0, horizon, forcing, truth).predictions)
}

/// `decode ∘ encode`: maps a `K × d` window and the current target value to
/// a `horizon × p` prediction.
pub fn forward(
    params: &Seq2SeqParams,
    x: &Matrix,
    y0: &[f64],
    horizon: usize,
    forcing: ForcingMode,
    truth: Option<&Matrix>,
) -> Result<Matrix> {
    check_window(params, x)?;
    let state = run_encoder(params, x).final_state();
    decode(params, &state, y0, horizon, forcing, truth)
}

/// Free-running prediction over the model's own horizon.
pub fn predict(params: &Seq2SeqParams, x: &Matrix, y0: &[f64]) -> Result<Matrix> {
    forward(
        params,
        x,
        y0,
        params.shape().horizon,
        ForcingMode::NonTeacherForced,
        None,
    )
}

fn check_sample(params: &Seq2SeqParams, sample: &SequencePair) -> Result<()> {
    let s = params.shape();
    check_window(params, &sample.x)?;
    if sample.y.rows() != s.horizon {
        return Err(Error::dim("sample horizon", s.horizon, sample.y.rows()));
    }
    if sample.y.cols() != s.output_dim {
        return Err(Error::dim(
            "sample target width",
            s.output_dim,
            sample.y.cols(),
        ));
    }
    if sample.y0.len() != s.output_dim {
        return Err(Error::dim("sample y0", s.output_dim, sample.y0.len()));
    }
    Ok(())
}

/// Loss of one sample, `(1/L) Σ_l |y_l − ŷ_l|²`, without gradients.
pub fn sample_loss(
    params: &Seq2SeqParams,
    sample: &SequencePair,
    forcing: ForcingMode,
) -> Result<f64> {
    check_sample(params, sample)?;
    let state = run_encoder(params, &sample.x).final_state();
    let pred = run_decoder(
        params,
        &state,
        &sample.y0,
        sample.y.rows(),
        forcing,
        Some(&sample.y),
    )
    .predictions;
    Ok(squared_error(&pred, &sample.y) / sample.y.rows() as f64)
}

fn squared_error(pred: &Matrix, truth: &Matrix) -> f64 {
    pred.as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Adds `∂loss/∂θ` for one sample into `grads` and returns the sample loss.
pub(crate) fn accumulate_gradients(
    params: &Seq2SeqParams,
    sample: &SequencePair,
    forcing: ForcingMode,
    grads: &mut Seq2SeqParams,
) -> Result<f64> {
    check_sample(params, sample)?;
    let s = *params.shape();
    let (hc, p, horizon) = (s.hidden, s.output_dim, s.horizon);

    let enc = run_encoder(params, &sample.x);
    let DecoderRun {
        trace: dec,
        predictions,
    } = run_decoder(
        params,
        &enc.final_state(),
        &sample.y0,
        horizon,
        forcing,
        Some(&sample.y),
    );
    let loss = squared_error(&predictions, &sample.y) / horizon as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            block: "loss".to_string(),
        });
    }

    let scale = 2.0 / horizon as f64;
    let mut dh = vec![0.0; hc];
    let mut dc = vec![0.0; hc];
    let mut dy = vec![0.0; p];
    let mut fed_back = vec![0.0; p];
    let mut dinput = vec![0.0; p];
    let mut da = vec![0.0; 4 * hc];
    let mut dz = vec![0.0; p + hc];

    for l in (0..horizon).rev() {
        for j in 0..p {
            dy[j] = scale * (predictions.get(l, j) - sample.y.get(l, j)) + fed_back[j];
        }
        let h = dec.h_at(l + 1);
        outer_acc(&mut grads.head_w, &dy, h);
        for (b, &d) in grads.head_b.as_mut_slice().iter_mut().zip(&dy) {
            *b += d;
        }
        matvec_t_acc(&params.head_w, &dy, &mut dh);
        dec.backward_step(
            &params.decoder,
            l,
            &mut dh,
            &mut dc,
            &mut grads.decoder,
            &mut dz,
            &mut da,
            Some(&mut dinput),
        );
        // Step l's input is the prediction of step l-1 only when free-running.
        match forcing {
            ForcingMode::NonTeacherForced => fed_back.copy_from_slice(&dinput),
            ForcingMode::TeacherForced => fed_back.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    let mut dz = vec![0.0; s.input_dim + hc];
    for k in (0..enc.steps).rev() {
        enc.backward_step(
            &params.encoder,
            k,
            &mut dh,
            &mut dc,
            &mut grads.encoder,
            &mut dz,
            &mut da,
            None,
        );
    }
    Ok(loss)
}

/// Loss and parameter gradient of one sample.
pub fn backward(
    params: &Seq2SeqParams,
    sample: &SequencePair,
    forcing: ForcingMode,
) -> Result<(f64, Seq2SeqParams)> {
    let mut grads = Seq2SeqParams::zeros(params.shape());
    let loss = accumulate_gradients(params, sample, forcing, &mut grads)?;
    grads.check_finite()?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    fn random_matrix(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_sample(shape: &ModelShape, seed: u64) -> SequencePair {
        let mut rng = stream(seed, Stream::Synth);
        SequencePair {
            x: random_matrix(&mut rng, shape.input_len, shape.input_dim),
            y: random_matrix(&mut rng, shape.horizon, shape.output_dim),
            y0: (0..shape.output_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            t_first: 0,
            t_last: 0,
        }
    }

    fn randomize(params: &mut Seq2SeqParams, seed: u64) {
        let mut rng = stream(seed, Stream::Synth);
        for block in params.blocks_mut() {
            for v in block.as_mut_slice() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
    }

    /// Scalar re-statement of the gate equations, written independently of
    /// the vectorised trace.
    fn scalar_cell(p: &LstmParams, input: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden = h.len();
        let mut z = input.to_vec();
        z.extend_from_slice(h);
        let gate = |g: usize, r: usize| {
            let mut s = p.b[g].get(r, 0);
            for (k, zk) in z.iter().enumerate() {
                s += p.w[g].get(r, k) * zk;
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_new = vec![0.0; hidden];
        let mut c_new = vec![0.0; hidden];
        for r in 0..hidden {
            let i = sig(gate(0, r));
            let f = sig(gate(1, r));
            let g = gate(2, r).tanh();
            let o = sig(gate(3, r));
            c_new[r] = f * c[r] + i * g;
            h_new[r] = o * c_new[r].tanh();
        }
        (h_new, c_new)
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn zero_cell_is_fixed_point() {
        let p = LstmParams::zeros(3, 4);
        let next = lstm_cell_step(&p, &[0.0; 3], &LstmState::zeros(4)).unwrap();
        assert_eq!(next, LstmState::zeros(4));
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let p = LstmParams::zeros(2, 3);
        let v = [0.8, -1.2, 3.0];
        let prev = LstmState {
            h: vec![0.0; 3],
            cell: v.to_vec(),
        };
        let next = lstm_cell_step(&p, &[0.3, -0.7], &prev).unwrap();
        for ((c, h), v) in next.cell.iter().zip(&next.h).zip(v) {
            assert_eq!(*c, 0.5 * v);
            assert_eq!(*h, 0.5 * (0.5 * v).tanh());
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let shape = ModelShape::new(3, 1, 5, 1, 1).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 11);
        let mut rng = stream(12, Stream::Synth);
        let input: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let prev = LstmState {
            h: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            cell: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let got = lstm_cell_step(&params.encoder, &input, &prev).unwrap();
        let (h, c) = scalar_cell(&params.encoder, &input, &prev.h, &prev.cell);
        assert!(max_abs_diff(&got.h, &h) < 1e-12);
        assert!(max_abs_diff(&got.cell, &c) < 1e-12);
    }

    #[test]
    fn cell_rejects_wrong_input_width() {
        let p = LstmParams::zeros(2, 3);
        assert!(matches!(
            lstm_cell_step(&p, &[1.0; 3], &LstmState::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_step_encode_is_one_cell_step() {
        let shape = ModelShape::new(2, 1, 4, 1, 1).unwrap();
        let params = init_params(&shape, 3).unwrap();
        let x = Matrix::from_rows(&[[0.4, -0.9]]).unwrap();
        let direct = lstm_cell_step(&params.encoder, x.row(0), &LstmState::zeros(4)).unwrap();
        assert_eq!(encode(&params, &x).unwrap(), direct);
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let shape = ModelShape::new(2, 1, 4, 5, 1).unwrap();
        let params = Seq2SeqParams::zeros(&shape);
        let x = Matrix::filled(5, 2, 0.7);
        assert_eq!(encode(&params, &x).unwrap(), LstmState::zeros(4));
    }

    #[test]
    fn encode_unrolls_three_steps() {
        let shape = ModelShape::new(2, 1, 4, 3, 1).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 5);
        let x = random_sample(&shape, 6).x;
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for k in 0..3 {
            let (hn, cn) = scalar_cell(&params.encoder, x.row(k), &h, &c);
            h = hn;
            c = cn;
        }
        let state = encode(&params, &x).unwrap();
        assert!(max_abs_diff(&state.h, &h) < 1e-12);
        assert!(max_abs_diff(&state.cell, &c) < 1e-12);
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let shape = ModelShape::new(2, 1, 4, 3, 1).unwrap();
        let params = Seq2SeqParams::zeros(&shape);
        assert!(encode(&params, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn horizon_one_modes_coincide() {
        let shape = ModelShape::new(2, 2, 4, 3, 1).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 8);
        let s = random_sample(&shape, 9);
        let a = forward(&params, &s.x, &s.y0, 1, ForcingMode::NonTeacherForced, None).unwrap();
        let b = forward(
            &params,
            &s.x,
            &s.y0,
            1,
            ForcingMode::TeacherForced,
            Some(&s.y),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_params_emit_head_bias() {
        let shape = ModelShape::new(3, 2, 4, 4, 5).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        params.head_b = Matrix::column(&[1.5, -0.25]);
        let s = random_sample(&shape.with_horizon(5), 2);
        let out = forward(&params, &s.x, &s.y0, 5, ForcingMode::NonTeacherForced, None).unwrap();
        for l in 0..5 {
            assert_eq!(out.row(l), &[1.5, -0.25]);
        }
    }

    #[test]
    fn decode_unrolls_with_feedback() {
        let shape = ModelShape::new(2, 1, 3, 2, 3).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 21);
        let s = random_sample(&shape, 22);
        let state = encode(&params, &s.x).unwrap();

        let mut h = state.h.clone();
        let mut c = state.cell.clone();
        let mut input = s.y0.clone();
        let mut expected = Vec::new();
        for _ in 0..3 {
            let (hn, cn) = scalar_cell(&params.decoder, &input, &h, &c);
            h = hn;
            c = cn;
            let y = params.head_b.get(0, 0)
                + (0..3).map(|j| params.head_w.get(0, j) * h[j]).sum::<f64>();
            expected.push(y);
            input = vec![y];
        }
        let got = decode(
            &params,
            &state,
            &s.y0,
            3,
            ForcingMode::NonTeacherForced,
            None,
        )
        .unwrap();
        assert!(max_abs_diff(got.as_slice(), &expected) < 1e-12);
    }

    #[test]
    fn teacher_forcing_requires_truth() {
        let shape = ModelShape::new(1, 1, 2, 2, 2).unwrap();
        let params = Seq2SeqParams::zeros(&shape);
        let err = decode(
            &params,
            &LstmState::zeros(2),
            &[0.0],
            2,
            ForcingMode::TeacherForced,
            None,
        );
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn forward_is_pure_and_sensitive() {
        let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 31);
        let s = random_sample(&shape, 32);
        let a = predict(&params, &s.x, &s.y0).unwrap();
        let b = predict(&params, &s.x, &s.y0).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_eq!((a.rows(), a.cols()), (2, 1));

        let mut x = s.x.clone();
        x.set(0, 1, x.get(0, 1) + 0.5);
        let c = predict(&params, &x, &s.y0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn perfect_fit_has_zero_head_gradient() {
        let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 41);
        let mut s = random_sample(&shape, 42);
        s.y = predict(&params, &s.x, &s.y0).unwrap();
        let (loss, grads) = backward(&params, &s, ForcingMode::NonTeacherForced).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.head_w.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.head_b.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn forcing_modes_give_different_gradients() {
        let shape = ModelShape::new(2, 1, 4, 3, 3).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 51);
        let s = random_sample(&shape, 52);
        let (_, free) = backward(&params, &s, ForcingMode::NonTeacherForced).unwrap();
        let (_, forced) = backward(&params, &s, ForcingMode::TeacherForced).unwrap();
        assert_ne!(free.flatten(), forced.flatten());
    }

    #[test]
    fn horizon_one_gradients_coincide() {
        let shape = ModelShape::new(3, 2, 5, 4, 1).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        randomize(&mut params, 61);
        let s = random_sample(&shape, 62);
        let a = backward(&params, &s, ForcingMode::NonTeacherForced).unwrap();
        let b = backward(&params, &s, ForcingMode::TeacherForced).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let shape = ModelShape::new(1, 1, 2, 2, 1).unwrap();
        let mut params = Seq2SeqParams::zeros(&shape);
        params.head_w.set(0, 0, f64::NAN);
        let s = random_sample(&shape, 1);
        match backward(&params, &s, ForcingMode::NonTeacherForced) {
            Err(Error::NonFinite { block }) => assert_eq!(block, "loss"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
