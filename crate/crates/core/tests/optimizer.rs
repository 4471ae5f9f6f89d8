use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thermoda_core::optim::AdamState;
use thermoda_core::{
    adam_step, backward, batch_loss_grad, init_params, train, ForcingMode, Matrix, ModelShape,
    Seq2SeqParams, SequencePair, TrainConfig,
};

fn random_pairs(shape: &ModelShape, n: usize, seed: u64) -> Vec<SequencePair> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut m = |r: usize, c: usize| {
                Matrix::from_vec(
                    r,
                    c,
                    (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            };
            SequencePair {
                x: m(shape.input_len, shape.input_dim),
                y: m(shape.horizon, shape.output_dim),
                y0: m(1, shape.output_dim).into_vec(),
                t_first: 0,
                t_last: 0,
            }
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

#[test]
fn single_sample_batch_equals_backward() {
    let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
    let params = init_params(&shape, 3).unwrap();
    let pairs = random_pairs(&shape, 1, 8);
    let (l1, g1) = batch_loss_grad(&params, &pairs, ForcingMode::NonTeacherForced).unwrap();
    let (l2, g2) = backward(&params, &pairs[0], ForcingMode::NonTeacherForced).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn duplicated_batch_has_same_mean() {
    let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
    let params = init_params(&shape, 3).unwrap();
    let pairs = random_pairs(&shape, 4, 9);
    let doubled: Vec<_> = pairs.iter().chain(&pairs).cloned().collect();
    let (l1, g1) = batch_loss_grad(&params, &pairs, ForcingMode::NonTeacherForced).unwrap();
    let (l2, g2) = batch_loss_grad(&params, &doubled, ForcingMode::NonTeacherForced).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    assert!(close(&g1.flatten(), &g2.flatten(), 1e-12));
}

#[test]
fn batch_is_mean_of_per_sample_calls() {
    let shape = ModelShape::new(3, 2, 5, 2, 3).unwrap();
    let params = init_params(&shape, 5).unwrap();
    let pairs = random_pairs(&shape, 3, 10);
    let forcing = ForcingMode::TeacherForced;
    let (loss, grads) = batch_loss_grad(&params, &pairs, forcing).unwrap();
    let mut expect_loss = 0.0;
    let mut expect = vec![0.0; params.num_params()];
    for p in &pairs {
        let (l, g) = backward(&params, p, forcing).unwrap();
        expect_loss += l / 3.0;
        for (e, v) in expect.iter_mut().zip(g.flatten()) {
            *e += v / 3.0;
        }
    }
    assert!((loss - expect_loss).abs() < 1e-12);
    assert!(close(&grads.flatten(), &expect, 1e-12));
}

#[test]
fn concatenated_batches_average_losses() {
    let shape = ModelShape::new(2, 1, 3, 2, 2).unwrap();
    let params = init_params(&shape, 6).unwrap();
    let a = random_pairs(&shape, 5, 1);
    let b = random_pairs(&shape, 5, 2);
    let both: Vec<_> = a.iter().chain(&b).cloned().collect();
    let f = ForcingMode::NonTeacherForced;
    let la = batch_loss_grad(&params, &a, f).unwrap().0;
    let lb = batch_loss_grad(&params, &b, f).unwrap().0;
    let lab = batch_loss_grad(&params, &both, f).unwrap().0;
    assert!((lab - 0.5 * (la + lb)).abs() < 1e-12);
}

#[test]
fn empty_batch_is_usage_error() {
    let shape = ModelShape::new(1, 1, 2, 2, 1).unwrap();
    let params = init_params(&shape, 0).unwrap();
    assert!(matches!(
        batch_loss_grad(&params, &[], ForcingMode::NonTeacherForced),
        Err(thermoda_core::Error::Usage(_))
    ));
}

/// Plain scalar statement of the Adam update.
struct ScalarAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, theta: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - cfg.beta1.powi(self.t));
            let vh = self.v[i] / (1.0 - cfg.beta2.powi(self.t));
            theta[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

#[test]
fn adam_matches_scalar_reference() {
    let shape = ModelShape::new(2, 1, 3, 2, 1).unwrap();
    let mut params = init_params(&shape, 1).unwrap();
    let n = params.num_params();
    let cfg = TrainConfig::default();
    let mut state = AdamState::new(n);
    let mut reference = ScalarAdam {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    let mut theta = params.flatten();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    for _ in 0..1000 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grads = Seq2SeqParams::unflatten(&shape, &g).unwrap();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        reference.step(&mut theta, &g, &cfg);
    }
    let got = params.flatten();
    let worst = got
        .iter()
        .zip(&theta)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst <= 1e-12, "max deviation {worst}");
    assert_eq!(state.t, 1000);
}

#[test]
fn adam_first_step_closed_form() {
    let shape = ModelShape::new(1, 1, 2, 1, 1).unwrap();
    let mut params = init_params(&shape, 2).unwrap();
    let before = params.flatten();
    let g = 0.37;
    let grads = Seq2SeqParams::unflatten(&shape, &vec![g; before.len()]).unwrap();
    let cfg = TrainConfig::default();
    let mut state = AdamState::new(before.len());
    adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    let expected_delta = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
    for (a, b) in params.flatten().iter().zip(&before) {
        assert!(((a - b) - expected_delta).abs() < 1e-15);
    }
}

#[test]
fn adam_zero_gradient_is_null_update() {
    let shape = ModelShape::new(2, 1, 3, 2, 1).unwrap();
    let mut params = init_params(&shape, 2).unwrap();
    let before = params.clone();
    let grads = Seq2SeqParams::zeros(&shape);
    let mut state = AdamState::new(params.num_params());
    adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.t, 1);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let shape = ModelShape::new(1, 1, 2, 1, 1).unwrap();
    let mut params = init_params(&shape, 2).unwrap();
    let mut grads = Seq2SeqParams::zeros(&shape);
    grads.head_b.set(0, 0, f64::INFINITY);
    let mut state = AdamState::new(params.num_params());
    let err = adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
    assert_eq!(
        err,
        thermoda_core::Error::NonFinite {
            block: "head.b".into()
        }
    );
}

#[test]
fn frozen_blocks_do_not_move() {
    let shape = ModelShape::new(2, 1, 3, 2, 1).unwrap();
    let mut params = init_params(&shape, 2).unwrap();
    let before = params.clone();
    let grads = Seq2SeqParams::unflatten(&shape, &vec![0.5; params.num_params()]).unwrap();
    let cfg = TrainConfig {
        freeze: vec!["encoder.w_input".into(), "head.b".into()],
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(params.num_params());
    adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    assert_eq!(params.encoder.w[0], before.encoder.w[0]);
    assert_eq!(params.head_b, before.head_b);
    assert_ne!(params.head_w, before.head_w);
}

#[test]
fn zero_epochs_returns_initial_params() {
    let shape = ModelShape::new(2, 1, 3, 2, 2).unwrap();
    let params = init_params(&shape, 4).unwrap();
    let data = random_pairs(&shape, 10, 4);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let trace = train(&params, &data, &cfg).unwrap();
    assert_eq!(trace.params, params);
    assert!(trace.epoch_loss.is_empty());
}

#[test]
fn fits_constant_target() {
    let shape = ModelShape::new(1, 1, 4, 3, 1).unwrap();
    let params = init_params(&shape, 5).unwrap();
    let mut data = random_pairs(&shape, 32, 5);
    for p in &mut data {
        p.y.fill(0.7);
    }
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let trace = train(&params, &data, &cfg).unwrap();
    let last = trace.final_loss().unwrap();
    assert!(last < 1e-3, "final loss {last}");
}

#[test]
fn learnable_task_loss_mostly_decreases() {
    // target: next values continue the last input feature scaled by 0.5
    let shape = ModelShape::new(1, 1, 6, 4, 2).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(33);
    let data: Vec<SequencePair> = (0..64)
        .map(|_| {
            let xs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let last = xs[3];
            SequencePair {
                x: Matrix::from_vec(4, 1, xs).unwrap(),
                y: Matrix::from_vec(2, 1, vec![0.5 * last, 0.25 * last]).unwrap(),
                y0: vec![last],
                t_first: 0,
                t_last: 0,
            }
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 40,
        seed: 1,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let trace = train(&init_params(&shape, 1).unwrap(), &data, &cfg).unwrap();
    let drops = trace.epoch_loss.windows(2).filter(|w| w[1] < w[0]).count();
    let transitions = trace.epoch_loss.len() - 1;
    assert!(
        drops as f64 >= 0.8 * transitions as f64,
        "{drops}/{transitions} decreasing: {:?}",
        trace.epoch_loss
    );
}

#[test]
fn training_is_bit_reproducible() {
    let shape = ModelShape::new(2, 1, 4, 3, 2).unwrap();
    let params = init_params(&shape, 8).unwrap();
    let data = random_pairs(&shape, 50, 8);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 7,
        seed: 99,
        ..TrainConfig::default()
    };
    let a = train(&params, &data, &cfg).unwrap();
    let b = train(&params, &data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_loss, b.epoch_loss);
}

#[test]
fn divergence_reports_epoch_and_step() {
    let shape = ModelShape::new(1, 1, 2, 2, 1).unwrap();
    let params = init_params(&shape, 8).unwrap();
    let mut data = random_pairs(&shape, 4, 8);
    data[2].y.set(0, 0, f64::NAN);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let err = train(&params, &data, &cfg).unwrap_err();
    assert_eq!(err, thermoda_core::Error::Diverged { epoch: 0, step: 0 });
}

#[test]
fn invalid_config_rejected() {
    for cfg in [
        TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            freeze: vec!["nope".into()],
            ..TrainConfig::default()
        },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}
