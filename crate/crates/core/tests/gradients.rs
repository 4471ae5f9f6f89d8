//! Analytic BPTT gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thermoda_core::model::sample_loss;
use thermoda_core::params::BLOCK_NAMES;
use thermoda_core::{
    backward, init_params, ForcingMode, Matrix, ModelShape, Seq2SeqParams, SequencePair,
};

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn random_sample(rng: &mut Xoshiro256PlusPlus, shape: &ModelShape) -> SequencePair {
    let mut m = |r: usize, c: usize| {
        Matrix::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    };
    let x = m(shape.input_len, shape.input_dim);
    let y = m(shape.horizon, shape.output_dim);
    let y0 = m(1, shape.output_dim).into_vec();
    SequencePair {
        x,
        y,
        y0,
        t_first: 0,
        t_last: 0,
    }
}

fn perturbed(params: &Seq2SeqParams, i: usize, delta: f64) -> Seq2SeqParams {
    let mut flat = params.flatten();
    flat[i] += delta;
    Seq2SeqParams::unflatten(params.shape(), &flat).unwrap()
}

/// Returns the worst (block, analytic, numeric) mismatch, if any.
fn check(
    params: &Seq2SeqParams,
    sample: &SequencePair,
    forcing: ForcingMode,
) -> Option<(String, f64, f64)> {
    let (_, grads) = backward(params, sample, forcing).unwrap();
    let analytic = grads.flatten();
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut offset = 0;
    for (block, &len) in BLOCK_NAMES.iter().zip(&sizes) {
        for (i, &a) in analytic.iter().enumerate().skip(offset).take(len) {
            let up = sample_loss(&perturbed(params, i, EPS), sample, forcing).unwrap();
            let down = sample_loss(&perturbed(params, i, -EPS), sample, forcing).unwrap();
            let numeric = (up - down) / (2.0 * EPS);
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR && diff > REL_TOL * a.abs().max(numeric.abs()) {
                return Some((format!("{block}[{}]", i - offset), a, numeric));
            }
        }
        offset += len;
    }
    None
}

#[test]
fn reference_instance_both_forcing_modes() {
    let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
    let mut params = init_params(&shape, 17).unwrap();
    // move away from the init so every gate is exercised
    let flat: Vec<f64> = params
        .flatten()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    params.assign_flat(&flat).unwrap();
    let sample = random_sample(&mut rng, &shape);
    for forcing in [ForcingMode::NonTeacherForced, ForcingMode::TeacherForced] {
        assert_eq!(check(&params, &sample, forcing), None, "{forcing:?}");
    }
}

#[test]
fn randomized_shapes() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    for case in 0..6 {
        let shape = ModelShape::new(
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(1..=8),
            rng.random_range(1..=5),
            rng.random_range(1..=3),
        )
        .unwrap();
        let params = init_params(&shape, case).unwrap();
        let sample = random_sample(&mut rng, &shape);
        let forcing = if case % 2 == 0 {
            ForcingMode::NonTeacherForced
        } else {
            ForcingMode::TeacherForced
        };
        assert_eq!(
            check(&params, &sample, forcing),
            None,
            "case {case} {shape:?}"
        );
    }
}

#[test]
fn gradient_block_order_matches_params() {
    let shape = ModelShape::new(3, 2, 5, 2, 2).unwrap();
    let params = init_params(&shape, 1).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let sample = random_sample(&mut rng, &shape);
    let (_, grads) = backward(&params, &sample, ForcingMode::NonTeacherForced).unwrap();
    for (p, g) in params.blocks().iter().zip(grads.blocks()) {
        assert_eq!((p.rows(), p.cols()), (g.rows(), g.cols()));
    }
}
