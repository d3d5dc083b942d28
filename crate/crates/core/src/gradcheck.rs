//! Central finite-difference checks of the tape's reverse-mode gradients.
//!
//! Each case builds a graph from a list of input tensors. The scalar under test
//! is `sum(out * r)` for a fixed random projection `r`, so every output element
//! contributes. The reported error for a case is the worst over its inputs of
//! `max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, 1e-6)`.

use rand::Rng;

use crate::error::Result;
use crate::nn::{lstm_cell_step, LstmVars};
use crate::rng::{rng_for, SimRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    build: Build,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

fn projected(case: &GradCase, inputs: &[Tensor], r: &Option<Tensor>) -> Result<(Tape, Vec<Var>, Var, Tensor)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let r = match r {
        Some(r) => r.clone(),
        None => Tensor::uniform(
            &shape,
            1.0,
            &mut rng_for(0x9C, &[shape.iter().product::<usize>() as u64]),
        ),
    };
    let rv = tape.leaf(r.clone());
    let prod = tape.mul(out, rv)?;
    let loss = tape.sum(prod)?;
    Ok((tape, vars, loss, r))
}

/// Runs one case and reports its worst relative error.
pub fn check(case: &GradCase) -> Result<GradReport> {
    let (tape, vars, loss, r) = projected(case, &case.inputs, &None)?;
    let analytic = tape.backward(loss, &vars)?;
    let r = Some(r);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (i, num) in numeric.iter_mut().enumerate() {
            let mut inputs = case.inputs.clone();
            let x0 = inputs[ti].data()[i];
            inputs[ti].data_mut()[i] = x0 + FD_STEP;
            let (t, _, l, _) = projected(case, &inputs, &r)?;
            let up = t.value(l).item();
            inputs[ti].data_mut()[i] = x0 - FD_STEP;
            let (t, _, l, _) = projected(case, &inputs, &r)?;
            let down = t.value(l).item();
            *num = (up - down) / (2.0 * FD_STEP);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let diff = numeric
            .iter()
            .zip(grad.data())
            .fold(0.0f64, |m, (n, a)| m.max((n - a).abs()));
        worst = worst.max(diff / scale);
        checked += grad.len();
    }
    Ok(GradReport {
        name: case.name.clone(),
        max_rel_err: worst,
        checked,
    })
}

/// Uniform values in `[-1, 1]` kept at least 0.05 away from zero so ReLU kinks
/// stay outside the finite-difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut SimRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn u(shape: &[usize], rng: &mut SimRng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// One case per primitive, plus a five-step LSTM unrolled through time.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = rng_for(seed, &[0x6AD]);
    let rng = &mut rng;
    vec![
        GradCase::new("add", vec![u(&[3, 4], rng), u(&[3, 4], rng)], |t, v| t.add(v[0], v[1])),
        GradCase::new("sub", vec![u(&[5], rng), u(&[5], rng)], |t, v| t.sub(v[0], v[1])),
        GradCase::new("mul", vec![u(&[2, 3], rng), u(&[2, 3], rng)], |t, v| t.mul(v[0], v[1])),
        GradCase::new("mul_scalar", vec![u(&[6], rng), u(&[1], rng)], |t, v| {
            t.mul_scalar(v[0], v[1])
        }),
        GradCase::new("scale", vec![u(&[4], rng)], |t, v| t.scale(v[0], -1.7)),
        GradCase::new("relu", vec![away_from_zero(&[10], rng)], |t, v| t.relu(v[0])),
        GradCase::new("sigmoid", vec![u(&[2, 5], rng).map(|x| 3.0 * x)], |t, v| {
            t.sigmoid(v[0])
        }),
        GradCase::new("tanh", vec![u(&[7], rng).map(|x| 2.0 * x)], |t, v| t.tanh(v[0])),
        GradCase::new("dense", vec![u(&[4], rng), u(&[3, 4], rng), u(&[3], rng)], |t, v| {
            t.dense(v[0], v[1], Some(v[2]))
        }),
        GradCase::new(
            "dense_batched",
            vec![u(&[5, 4], rng), u(&[3, 4], rng), u(&[3], rng)],
            |t, v| t.dense(v[0], v[1], Some(v[2])),
        ),
        GradCase::new("dense_no_bias", vec![u(&[2, 3], rng), u(&[4, 3], rng)], |t, v| {
            t.dense(v[0], v[1], None)
        }),
        GradCase::new("conv2d", vec![u(&[2, 5, 5], rng), u(&[3, 2, 3, 3], rng)], |t, v| {
            t.conv2d(v[0], v[1], 1, 1)
        }),
        GradCase::new(
            "conv2d_strided",
            vec![u(&[2, 6, 6], rng), u(&[2, 2, 3, 3], rng)],
            |t, v| t.conv2d(v[0], v[1], 2, 1),
        ),
        GradCase::new(
            "conv2d_transpose",
            vec![u(&[2, 3, 3], rng), u(&[2, 3, 3, 3], rng)],
            |t, v| t.conv2d_transpose(v[0], v[1], 1, 1),
        ),
        GradCase::new(
            "conv2d_transpose_strided",
            vec![u(&[3, 3, 3], rng), u(&[3, 2, 4, 4], rng)],
            |t, v| t.conv2d_transpose(v[0], v[1], 2, 1),
        ),
        GradCase::new("channel_bias", vec![u(&[3, 2, 2], rng), u(&[3], rng)], |t, v| {
            t.channel_bias(v[0], v[1])
        }),
        GradCase::new(
            "conv2d_batched",
            vec![u(&[2, 3, 5, 5], rng), u(&[3, 2, 3, 3], rng)],
            |t, v| t.conv2d(v[0], v[1], 2, 1),
        ),
        GradCase::new(
            "conv2d_transpose_batched",
            vec![u(&[3, 2, 3, 3], rng), u(&[3, 2, 4, 4], rng)],
            |t, v| t.conv2d_transpose(v[0], v[1], 2, 1),
        ),
        GradCase::new(
            "channel_bias_batched",
            vec![u(&[3, 2, 2, 2], rng), u(&[3], rng)],
            |t, v| t.channel_bias(v[0], v[1]),
        ),
        GradCase::new("global_avg_pool", vec![u(&[3, 4, 4], rng)], |t, v| {
            t.global_avg_pool(v[0])
        }),
        GradCase::new("avg_pool", vec![u(&[2, 4, 4], rng)], |t, v| t.avg_pool(v[0], 2)),
        GradCase::new("adaptive_avg_pool", vec![u(&[2, 8, 8], rng)], |t, v| {
            t.adaptive_avg_pool(v[0], 5, 5)
        }),
        GradCase::new("mse", vec![u(&[3, 3], rng), u(&[3, 3], rng)], |t, v| t.mse(v[0], v[1])),
        GradCase::new("sum", vec![u(&[4, 2], rng)], |t, v| t.sum(v[0])),
        GradCase::new("norm", vec![u(&[6], rng)], |t, v| t.norm(v[0])),
        GradCase::new("reshape", vec![u(&[2, 6], rng)], |t, v| t.reshape(v[0], &[3, 4])),
        GradCase::new("slice_last", vec![u(&[3, 8], rng)], |t, v| t.slice_last(v[0], 2, 4)),
        lstm_case(rng),
    ]
}

fn lstm_case(rng: &mut SimRng) -> GradCase {
    let (input, hidden, steps) = (2, 3, 5);
    let mut inputs = vec![
        u(&[4 * hidden, input], rng),
        u(&[4 * hidden, hidden], rng),
        u(&[4 * hidden], rng),
        u(&[hidden], rng),
        u(&[hidden], rng),
    ];
    inputs.extend((0..steps).map(|_| u(&[input], rng)));
    GradCase::new("lstm_bptt_5", inputs, move |t, v| {
        let p = LstmVars {
            w_ih: v[0],
            w_hh: v[1],
            b: v[2],
        };
        let mut state = (v[3], v[4]);
        let mut hs = Vec::new();
        for &x in &v[5..] {
            state = lstm_cell_step(t, x, state, p)?;
            hs.push(state.0);
        }
        let mut acc = hs[0];
        for &h in &hs[1..] {
            acc = t.add(acc, h)?;
        }
        let c = t.sum(state.1)?;
        let acc = t.sum(acc)?;
        t.add(acc, c)
    })
}

/// Three small networks mixing the primitives: a conv/deconv autoencoder with an
/// MSE head, a pooled conv classifier, and a batched dense/tanh/norm stack.
pub fn composite_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = rng_for(seed, &[0xC0B]);
    let rng = &mut rng;
    vec![
        GradCase::new(
            "composite_autoencoder",
            vec![
                u(&[2, 6, 6], rng),
                u(&[3, 2, 3, 3], rng),
                u(&[3], rng),
                u(&[3, 2, 4, 4], rng),
                u(&[2, 6, 6], rng),
            ],
            |t, v| {
                let h = t.conv2d(v[0], v[1], 2, 1)?;
                let h = t.channel_bias(h, v[2])?;
                let h = t.relu(h)?;
                let y = t.conv2d_transpose(h, v[3], 2, 1)?;
                let y = t.sigmoid(y)?;
                t.mse(y, v[4])
            },
        ),
        GradCase::new(
            "composite_pooled_head",
            vec![
                u(&[3, 4, 4], rng),
                u(&[4, 3, 3, 3], rng),
                u(&[2, 16], rng),
                u(&[2], rng),
            ],
            |t, v| {
                let h = t.conv2d(v[0], v[1], 1, 1)?;
                let h = t.tanh(h)?;
                let h = t.avg_pool(h, 2)?;
                let h = t.reshape(h, &[16])?;
                let y = t.dense(h, v[2], Some(v[3]))?;
                t.sigmoid(y)
            },
        ),
        GradCase::new(
            "composite_dense_norm",
            vec![
                u(&[3, 4], rng),
                u(&[5, 4], rng),
                u(&[5], rng),
                u(&[2, 5], rng),
                u(&[1], rng),
            ],
            |t, v| {
                let h = t.dense(v[0], v[1], Some(v[2]))?;
                let h = t.tanh(h)?;
                let y = t.dense(h, v[3], None)?;
                let n = t.norm(y)?;
                let y = t.mul_scalar(y, v[4])?;
                let y = t.mul_scalar(y, n)?;
                t.slice_last(y, 1, 1)
            },
        ),
    ]
}
