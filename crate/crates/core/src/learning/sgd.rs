use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::{Arch, DataShard, LearnError, ModelParams, TrainSpec};

/// Bookkeeping returned alongside a trained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    /// Number of parameter updates performed.
    pub steps: usize,
    /// Mean cross-entropy over the examples of the final epoch, measured
    /// before each step.
    pub last_epoch_loss: f64,
}

/// Forward-pass scratch space so hot loops do not allocate.
struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Scratch {
    fn new(arch: Arch) -> Self {
        let hidden = match arch {
            Arch::Mlp { hidden, .. } => hidden,
            Arch::Softmax { .. } => 0,
        };
        Scratch {
            hidden: vec![0.0; hidden],
            logits: vec![0.0; arch.classes()],
        }
    }
}

fn forward(arch: Arch, w: &[f64], x: &[f64], s: &mut Scratch) {
    match arch {
        Arch::Softmax { inputs, classes } => {
            let bias = &w[inputs * classes..];
            for k in 0..classes {
                let row = &w[k * inputs..(k + 1) * inputs];
                s.logits[k] = bias[k] + dot(row, x);
            }
        }
        Arch::Mlp {
            inputs,
            hidden,
            classes,
        } => {
            let (w1, rest) = w.split_at(hidden * inputs);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            for j in 0..hidden {
                let z = b1[j] + dot(&w1[j * inputs..(j + 1) * inputs], x);
                s.hidden[j] = if z > 0.0 { z } else { 0.0 };
            }
            for k in 0..classes {
                s.logits[k] = b2[k] + dot(&w2[k * hidden..(k + 1) * hidden], &s.hidden);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest logit; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Turns `s.logits` into `p - onehot(label)` in place and returns the
/// example's cross-entropy.
fn softmax_grad(s: &mut Scratch, label: usize) -> f64 {
    let max = s.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in s.logits.iter_mut() {
        *l = libm::exp(*l - max);
        sum += *l;
    }
    let loss = -libm::log(s.logits[label] / sum);
    for l in s.logits.iter_mut() {
        *l /= sum;
    }
    s.logits[label] -= 1.0;
    loss
}

/// Accumulates the gradient of one example into `grad`; expects
/// `s.logits` to already hold `p - onehot`.
fn backward(arch: Arch, w: &[f64], x: &[f64], s: &Scratch, grad: &mut [f64]) {
    match arch {
        Arch::Softmax { inputs, classes } => {
            let (gw, gb) = grad.split_at_mut(inputs * classes);
            for k in 0..classes {
                let g = s.logits[k];
                gb[k] += g;
                for (acc, xi) in gw[k * inputs..(k + 1) * inputs].iter_mut().zip(x) {
                    *acc += g * xi;
                }
            }
        }
        Arch::Mlp {
            inputs,
            hidden,
            classes,
        } => {
            let w2 = &w[hidden * inputs + hidden..hidden * inputs + hidden + classes * hidden];
            let (gw1, rest) = grad.split_at_mut(hidden * inputs);
            let (gb1, rest) = rest.split_at_mut(hidden);
            let (gw2, gb2) = rest.split_at_mut(classes * hidden);
            for k in 0..classes {
                let g = s.logits[k];
                gb2[k] += g;
                for (acc, a) in gw2[k * hidden..(k + 1) * hidden].iter_mut().zip(&s.hidden) {
                    *acc += g * a;
                }
            }
            for j in 0..hidden {
                if s.hidden[j] <= 0.0 {
                    continue;
                }
                let dz: f64 = (0..classes).map(|k| s.logits[k] * w2[k * hidden + j]).sum();
                gb1[j] += dz;
                for (acc, xi) in gw1[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                    *acc += dz * xi;
                }
            }
        }
    }
}

fn check_compatible(params: &ModelParams, shard: &DataShard) -> Result<(), LearnError> {
    let arch = params.arch();
    if shard.dim() != arch.inputs() {
        return Err(LearnError::DimMismatch {
            expected: arch.inputs(),
            got: shard.dim(),
        });
    }
    if shard.classes() > arch.classes() {
        return Err(LearnError::InvalidArch("shard has more classes than the model"));
    }
    Ok(())
}

/// Predicted class for one feature vector.
pub fn predict(params: &ModelParams, x: &[f64]) -> usize {
    let mut s = Scratch::new(params.arch());
    forward(params.arch(), params.values(), x, &mut s);
    argmax(&s.logits)
}

/// Fraction of `test` classified correctly.
pub fn evaluate(params: &ModelParams, test: &DataShard) -> Result<f64, LearnError> {
    check_compatible(params, test)?;
    let arch = params.arch();
    let mut s = Scratch::new(arch);
    let mut correct = 0usize;
    for i in 0..test.len() {
        let (x, y) = test.example(i);
        forward(arch, params.values(), x, &mut s);
        if argmax(&s.logits) == y as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Minibatch SGD on softmax cross-entropy starting from `start`.
pub fn local_train<R: RngCore + ?Sized>(
    start: &ModelParams,
    shard: &DataShard,
    spec: &TrainSpec,
    rng: &mut R,
) -> Result<ModelParams, LearnError> {
    local_train_with_stats(start, shard, spec, rng).map(|(p, _)| p)
}

pub fn local_train_with_stats<R: RngCore + ?Sized>(
    start: &ModelParams,
    shard: &DataShard,
    spec: &TrainSpec,
    rng: &mut R,
) -> Result<(ModelParams, TrainStats), LearnError> {
    check_compatible(start, shard)?;
    spec.validate_for(shard.len())?;
    let arch = start.arch();
    let mut params = start.clone();
    let mut grad = vec![0.0; arch.param_count()];
    let mut scratch = Scratch::new(arch);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut steps = 0;
    let mut epoch_loss = 0.0;

    for epoch in 0..spec.epochs {
        order.shuffle(rng);
        epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = shard.example(i);
                forward(arch, params.values(), x, &mut scratch);
                batch_loss += softmax_grad(&mut scratch, y as usize);
                backward(arch, params.values(), x, &scratch, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(LearnError::Diverged { epoch, step: steps });
            }
            epoch_loss += batch_loss;
            let scale = spec.learning_rate / batch.len() as f64;
            for (p, g) in params.values_mut().iter_mut().zip(&grad) {
                *p -= scale * g;
            }
            steps += 1;
        }
        if !params.is_finite() {
            return Err(LearnError::Diverged { epoch, step: steps });
        }
    }
    let stats = TrainStats {
        steps,
        last_epoch_loss: epoch_loss / shard.len() as f64,
    };
    Ok((params, stats))
}
