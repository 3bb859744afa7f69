use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::StageConfig;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

/// One row of a training log. Epoch 0 describes the initial parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

pub fn logs_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_metric,seconds\n");
    for l in logs {
        writeln!(s, "{},{:.8e},{:.8e},{:.3}", l.epoch, l.train_loss, l.val_metric, l.seconds).unwrap();
    }
    s
}

/// Whether a larger validation metric is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

impl Goal {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Goal::Minimize => a < b,
            Goal::Maximize => a > b,
        }
    }
}

/// A model being optimized: tape binding, gradient collection and its
/// trainable tensors in a fixed order.
pub trait Trainable: Clone {
    type Bindings;
    fn bind(&self, tape: &mut Tape) -> Self::Bindings;
    fn pull_grads(&mut self, tape: &Tape, b: &Self::Bindings) -> Result<()>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

pub struct Fitted<M> {
    pub best: M,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub logs: Vec<EpochLog>,
}

/// Mean of `loss_of` over batches of `idx`.
pub fn mean_loss<M>(
    model: &M,
    idx: &[usize],
    batch: usize,
    loss_of: &mut impl FnMut(&M, &mut Tape, &[usize]) -> Result<Var>,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch) {
        let mut tape = Tape::new();
        let l = loss_of(model, &mut tape, chunk)?;
        total += tape.scalar(l) as f64 * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Adam minibatch training with a seeded per-epoch reshuffle and early
/// stopping. `loss_of` records a batch loss on a fresh tape; `validate`
/// scores a model. The returned model is the best one seen, including the
/// initial parameters.
pub fn fit<M: Trainable>(
    mut model: M,
    n_train: usize,
    stage: &StageConfig,
    seed: u64,
    goal: Goal,
    mut loss_of: impl FnMut(&M, &mut Tape, &M::Bindings, &[usize]) -> Result<Var>,
    mut validate: impl FnMut(&M) -> Result<f64>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Fitted<M>> {
    if n_train == 0 {
        return Err(Error::input("empty training set"));
    }
    crate::tensor::flush_denormals();
    let t0 = Instant::now();
    let all: Vec<usize> = (0..n_train).collect();
    let mut bound_loss = |m: &M, tape: &mut Tape, idx: &[usize]| {
        let b = m.bind(tape);
        loss_of(m, tape, &b, idx)
    };
    let first = EpochLog {
        epoch: 0,
        train_loss: mean_loss(&model, &all, stage.batch_size.max(256), &mut bound_loss)?,
        val_metric: validate(&model)?,
        seconds: t0.elapsed().as_secs_f64(),
    };
    on_epoch(&first);
    let mut logs = vec![first];
    let (mut best, mut best_epoch, mut best_metric) = (model.clone(), 0, first.val_metric);

    let mut adam = Adam::new(
        AdamConfig {
            lr: stage.lr,
            ..AdamConfig::default()
        },
        model.tensors_mut().into_iter().map(|t| &*t),
    );
    for epoch in 1..=stage.epochs {
        let t = Instant::now();
        let mut order = all.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        for (step, idx) in order.chunks(stage.batch_size).enumerate() {
            model.tensors_mut().into_iter().for_each(Tensor::zero_grad);
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let loss = loss_of(&model, &mut tape, &b, idx)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            tape.backward(loss)?;
            model.pull_grads(&tape, &b)?;
            adam.step(&mut model.tensors_mut())?;
            total += value as f64 * idx.len() as f64;
        }
        let log = EpochLog {
            epoch,
            train_loss: total / n_train as f64,
            val_metric: validate(&model)?,
            seconds: t.elapsed().as_secs_f64(),
        };
        if !log.val_metric.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation metric at epoch {epoch}")));
        }
        on_epoch(&log);
        logs.push(log);
        if goal.better(log.val_metric, best_metric) {
            best = model.clone();
            best_epoch = epoch;
            best_metric = log.val_metric;
        } else if epoch - best_epoch >= stage.patience {
            break;
        }
    }
    Ok(Fitted {
        best,
        best_epoch,
        best_metric,
        logs,
    })
}

pub fn write_logs(path: &Path, logs: &[EpochLog]) -> Result<()> {
    fs::write(path, logs_csv(logs))?;
    Ok(())
}
