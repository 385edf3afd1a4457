//! Central finite differences against the tape, per operation and for the
//! whole model.

use dta_core::model::{FusionVariant, Mode, Model, ModelConfig, Sample};
use dta_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::synth;

pub const TRIALS: usize = 20;
const OP_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute gap when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

type Build = dyn Fn(&mut Tape<'_>, &[Var]) -> dta_core::tensor::Result<Var>;
type OpCase = (&'static str, Vec<&'static [usize]>, Box<Build>);

/// Loss `Σ op(x) ⊙ r` for a fixed random `r`, so every output entry
/// carries a distinct weight.
fn weighted_loss(inputs: &[Tensor], weights: &[f64], build: &Build) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().trainable())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let shape = tape.shape(out).unwrap().to_vec();
    let r = tape.constant(shape, weights.to_vec()).unwrap();
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).unwrap()[0];
    let grads = tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    (value, g)
}

fn output_len(inputs: &[Tensor], build: &Build) -> usize {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).unwrap().len()
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst relative error of one operation over all trials.
fn check_op(shapes: &[&[usize]], build: &Build, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + trial as u64);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        let weights: Vec<f64> = (0..output_len(&inputs, build))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let (_, analytic) = weighted_loss(&inputs, &weights, build);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let numeric: Vec<f64> = (0..input.numel())
                .map(|j| {
                    let eval = |delta: f64| {
                        let mut shifted = inputs.clone();
                        shifted[k].data_mut()[j] += delta;
                        weighted_loss(&shifted, &weights, build).0
                    };
                    (eval(h) - eval(-h)) / (2.0 * h)
                })
                .collect();
            worst = worst.max(rel_err(&numeric, &analytic[k]));
        }
    }
    worst
}

pub struct OpReport {
    pub name: &'static str,
    pub worst: f64,
}

pub fn per_op() -> Vec<OpReport> {
    let ops: Vec<OpCase> = vec![
        ("matmul", vec![&[3, 4], &[4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![&[2, 3], &[2, 3]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_bias", vec![&[3, 4], &[4]], Box::new(|t, v| t.add_bias(v[0], v[1]))),
        ("mul", vec![&[2, 3], &[2, 3]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![&[5]], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("relu", vec![&[5, 3]], Box::new(|t, v| t.relu(v[0]))),
        ("softmax", vec![&[3, 5]], Box::new(|t, v| t.softmax_last(v[0]))),
        (
            "conv1d_dilated",
            vec![&[3, 12], &[2, 3, 3], &[2]],
            Box::new(|t, v| t.conv1d_dilated(v[0], v[1], v[2], 2)),
        ),
        (
            "embedding_lookup",
            vec![&[6, 3]],
            Box::new(|t, v| t.embedding_lookup(v[0], &[0, 2, 2, 5, 1])),
        ),
        (
            "global_max_pool",
            vec![&[5, 4]],
            Box::new(|t, v| t.global_max_pool(v[0])),
        ),
        (
            "outer_product3",
            vec![&[2], &[3], &[2]],
            Box::new(|t, v| t.outer_product3(v[0], v[1], v[2])),
        ),
        (
            "dropout",
            vec![&[4, 3]],
            Box::new(|t, v| t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(99))),
        ),
        ("mse_loss", vec![&[5], &[5]], Box::new(|t, v| t.mse_loss(v[0], v[1]))),
        (
            "concat",
            vec![&[2, 3], &[2, 2]],
            Box::new(|t, v| t.concat(&[v[0], v[1]])),
        ),
        ("slice_last", vec![&[3, 5]], Box::new(|t, v| t.slice_last(v[0], 1, 3))),
        ("transpose", vec![&[3, 4]], Box::new(|t, v| t.transpose(v[0]))),
        ("reshape", vec![&[3, 4]], Box::new(|t, v| t.reshape(v[0], vec![2, 6]))),
        ("sum", vec![&[7]], Box::new(|t, v| t.sum(v[0]))),
    ];
    ops.into_iter()
        .enumerate()
        .map(|(i, (name, shapes, build))| OpReport {
            name,
            worst: check_op(&shapes, build.as_ref(), i as u64 + 1),
        })
        .collect()
}

pub fn op_tolerance() -> f64 {
    OP_TOL
}

/// Zero-initialised biases put ReLU inputs exactly on the kink, where
/// central differences are meaningless.
fn jitter_biases(model: &mut Model, rng: &mut ChaCha8Rng) {
    let idx: Vec<usize> = (0..model.params().len())
        .filter(|&i| model.params().names()[i].ends_with(".bias"))
        .collect();
    for i in idx {
        for v in model.params_mut().tensors_mut()[i].data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
}

fn batch_loss(model: &Model, batch: &[Sample], y: &[f64]) -> f64 {
    let refs: Vec<&Sample> = batch.iter().collect();
    model.loss(&refs, y).unwrap()
}

pub struct ModelReport {
    pub variant: FusionVariant,
    pub worst_coordinates: f64,
    pub worst_direction: f64,
}

/// Per trial: 40 sampled coordinates compared as a vector, plus one random
/// direction through every parameter at once.
pub fn whole_model() -> Vec<ModelReport> {
    let h = 1e-5;
    FusionVariant::ALL
        .iter()
        .map(|&variant| {
            let mut worst_coordinates = 0.0f64;
            let mut worst_direction = 0.0f64;
            for trial in 0..TRIALS {
                let seed = 7_000 + trial as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let config = ModelConfig {
                    fusion: variant,
                    attend_pre_pool: trial % 2 == 0,
                    ..synth::toy_config()
                };
                let mut model = Model::new(config, seed).unwrap();
                jitter_biases(&mut model, &mut rng);
                let batch = synth::samples(2, 30, 24, seed);
                let y = [rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)];
                let refs: Vec<&Sample> = batch.iter().collect();
                let (_, grads) = model
                    .loss_and_gradients(&refs, &y, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))
                    .unwrap();
                let grads: Vec<Vec<f64>> = grads.into_iter().map(Option::unwrap).collect();

                let mut numeric = Vec::new();
                let mut analytic = Vec::new();
                for _ in 0..40 {
                    let ti = rng.gen_range(0..model.params().len());
                    let j = rng.gen_range(0..model.params().tensors()[ti].numel());
                    let shifted = |delta: f64| {
                        let mut m = model.clone();
                        m.params_mut().tensors_mut()[ti].data_mut()[j] += delta;
                        batch_loss(&m, &batch, &y)
                    };
                    numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
                    analytic.push(grads[ti][j]);
                }
                worst_coordinates = worst_coordinates.max(rel_err(&numeric, &analytic));

                let direction: Vec<Vec<f64>> = grads
                    .iter()
                    .map(|g| g.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let along = |delta: f64| {
                    let mut m = model.clone();
                    for (t, d) in m.params_mut().tensors_mut().iter_mut().zip(&direction) {
                        t.data_mut().iter_mut().zip(d).for_each(|(x, dx)| *x += delta * dx);
                    }
                    batch_loss(&m, &batch, &y)
                };
                let fd = (along(h) - along(-h)) / (2.0 * h);
                let an: f64 = grads
                    .iter()
                    .zip(&direction)
                    .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                worst_direction = worst_direction.max(rel_err(&[fd], &[an]));
            }
            ModelReport {
                variant,
                worst_coordinates,
                worst_direction,
            }
        })
        .collect()
}

pub fn model_tolerance() -> f64 {
    MODEL_TOL
}
