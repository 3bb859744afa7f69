//! Central finite-difference verification of the tape's adjoints.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of the backward code it is checking. Errors are reported
//! norm-wise: `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Step used by every finite-difference check in this crate.
pub const FD_EPS: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub seed: u64,
    pub rel_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares analytic and central-difference gradients of a scalar
/// function of `inputs` w.r.t. every input with `requires_grad` set.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f32, forward: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = record(&mut tape, inputs);
    let loss = forward(&mut tape, &vars)?;
    tape.backward(loss)?;

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs = record(&mut t, ts);
        let l = forward(&mut t, &vs)?;
        Ok(t.scalar(l) as f64)
    };

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        match tape.grad(vars[i]) {
            Some(g) => analytic.extend(g.iter().map(|&v| v as f64)),
            None => analytic.extend(std::iter::repeat(0.0).take(input.len())),
        }
        for j in 0..input.len() {
            let orig = input.data()[j];
            let plus = orig + eps;
            let minus = orig - eps;
            work[i].data_mut()[j] = plus;
            let f_plus = eval(&work)?;
            work[i].data_mut()[j] = minus;
            let f_minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((f_plus - f_minus) / (plus as f64 - minus as f64));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

fn record(tape: &mut Tape, ts: &[Tensor]) -> Vec<Var> {
    ts.iter()
        .map(|t| {
            if t.requires_grad() {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

fn probe<R: Rng>(n: usize, rng: &mut R) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values spread at least `gap` apart so that no finite-difference step can
/// cross a max-pool tie or a ReLU kink.
fn separated<R: Rng>(shape: &[usize], gap: f32, rng: &mut R) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0 + 0.5) * gap).collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).expect("shape matches")
}

fn away_from_zero<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05f32..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn conv_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=3);
    let o = rng.gen_range(1..=3);
    let k = if rng.gen_bool(0.5) { 3 } else { 1 };
    let pad = if k == 3 { rng.gen_range(0..=1) } else { 0 };
    let h = rng.gen_range(3..=6);
    let w = rng.gen_range(3..=6);
    let x = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng).with_grad();
    let wt = Tensor::uniform(&[o, c, k, k], -1.0, 1.0, &mut rng).with_grad();
    let b = Tensor::uniform(&[o], -1.0, 1.0, &mut rng).with_grad();
    let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
    let coeffs = probe(n * o * oh * ow, &mut rng);
    check_gradients(&[x, wt, b], FD_EPS, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], pad)?;
        t.weighted_sum(y, &coeffs)
    })
}

fn maxpool_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=6), rng.gen_range(2..=6)];
    let x = separated(&shape, 0.01, &mut rng).with_grad();
    let out = shape[0] * shape[1] * (shape[2] / 2) * (shape[3] / 2);
    let coeffs = probe(out, &mut rng);
    check_gradients(&[x], FD_EPS, |t, v| {
        let y = t.maxpool2x2(v[0])?;
        t.weighted_sum(y, &coeffs)
    })
}

fn conv_transpose_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let x = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng).with_grad();
    let wt = Tensor::uniform(&[c, o, 2, 2], -1.0, 1.0, &mut rng).with_grad();
    let b = Tensor::uniform(&[o], -1.0, 1.0, &mut rng).with_grad();
    let coeffs = probe(n * o * 4 * h * w, &mut rng);
    check_gradients(&[x, wt, b], FD_EPS, |t, v| {
        let y = t.conv_transpose2x2(v[0], v[1], v[2])?;
        t.weighted_sum(y, &coeffs)
    })
}

fn dense_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, f, g) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
    let x = Tensor::uniform(&[n, f], -1.0, 1.0, &mut rng).with_grad();
    let w = Tensor::uniform(&[f, g], -1.0, 1.0, &mut rng).with_grad();
    let b = Tensor::uniform(&[g], -1.0, 1.0, &mut rng).with_grad();
    let coeffs = probe(n * g, &mut rng);
    check_gradients(&[x, w, b], FD_EPS, |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        t.weighted_sum(y, &coeffs)
    })
}

fn relu_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&[rng.gen_range(1..=3), rng.gen_range(1..=8)], &mut rng).with_grad();
    let coeffs = probe(x.len(), &mut rng);
    check_gradients(&[x], FD_EPS, |t, v| {
        let y = t.relu(v[0]);
        t.weighted_sum(y, &coeffs)
    })
}

fn sigmoid_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(&[rng.gen_range(1..=3), rng.gen_range(1..=8)], -4.0, 4.0, &mut rng).with_grad();
    let coeffs = probe(x.len(), &mut rng);
    check_gradients(&[x], FD_EPS, |t, v| {
        let y = t.sigmoid(v[0]);
        t.weighted_sum(y, &coeffs)
    })
}

fn concat_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let a = Tensor::uniform(&[n, rng.gen_range(1..=3), h, w], -1.0, 1.0, &mut rng).with_grad();
    let b = Tensor::uniform(&[n, rng.gen_range(1..=3), h, w], -1.0, 1.0, &mut rng).with_grad();
    let coeffs = probe(a.len() + b.len(), &mut rng);
    check_gradients(&[a, b], FD_EPS, |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        let y = t.flatten(y)?;
        t.weighted_sum(y, &coeffs)
    })
}

fn cross_entropy_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let logits = Tensor::uniform(&[n, 10], -3.0, 3.0, &mut rng).with_grad();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    check_gradients(&[logits], FD_EPS, |t, v| t.softmax_cross_entropy(v[0], &labels))
}

fn mse_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=6)];
    let pred = Tensor::uniform(&shape, -1.0, 1.0, &mut rng).with_grad();
    let target = Tensor::uniform(&shape, -1.0, 1.0, &mut rng).with_grad();
    check_gradients(&[pred, target], FD_EPS, |t, v| t.mse_loss(v[0], v[1]))
}

type Case = (&'static str, fn(u64) -> Result<f64>);

const CASES: [Case; 9] = [
    ("conv2d", conv_case),
    ("maxpool2x2", maxpool_case),
    ("conv_transpose2x2", conv_transpose_case),
    ("dense", dense_case),
    ("relu", relu_case),
    ("sigmoid", sigmoid_case),
    ("concat_channels", concat_case),
    ("softmax_cross_entropy", cross_entropy_case),
    ("mse_loss", mse_case),
];

/// Runs the finite-difference check for every differentiable primitive on
/// randomized small shapes, one case per (primitive, seed).
pub fn primitive_suite(seeds: std::ops::Range<u64>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (name, case) in CASES {
        for seed in seeds.clone() {
            out.push(GradCheck {
                name,
                seed,
                rel_error: case(seed)?,
            });
        }
    }
    Ok(out)
}
