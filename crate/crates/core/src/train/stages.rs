use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{LossKind, StageConfig};
use crate::data::{to_unit_interval, MnistSet, PerceptDataset, Resolution};
use crate::error::{Error, Result};
use crate::eval::micro_f1;
use crate::models::{Bound, Checkpoint, Vgg5, Vgg5Config};
use crate::tensor::{Tape, Tensor, Var};

use super::fit::{fit, write_logs, EpochLog, Fitted, Goal, Trainable};
use super::infer::{classify, encode, gather, image_batch, surrogate_percepts};
use super::nets::{load_classifier, Bindings, Encoder, Surrogate};

pub const CHECKPOINT_FILE: &str = "checkpoint.npckpt";
pub const LOG_FILE: &str = "log.csv";

/// Settings of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub resolution: Resolution,
    pub loss: LossKind,
    pub stage: StageConfig,
    pub seed: u64,
    pub surrogate: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    /// Recorded in checkpoint metadata.
    pub config_hash: String,
}

impl TrainConfig {
    /// Checks the prerequisites of encoder training.
    pub fn validate_encoder(&self) -> Result<()> {
        let Some(s) = &self.surrogate else {
            return Err(Error::Config("encoder training needs a surrogate checkpoint".into()));
        };
        if !s.exists() {
            return Err(Error::precondition(s, "surrogate checkpoint not found; run pretrain-surrogate"));
        }
        if self.loss == LossKind::Ce {
            match &self.classifier {
                None => return Err(Error::Config("cross-entropy training needs a classifier checkpoint".into())),
                Some(c) if !c.exists() => {
                    return Err(Error::precondition(c, "classifier checkpoint not found; run pretrain-classifier"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl Trainable for Surrogate {
    type Bindings = Bindings;
    fn bind(&self, tape: &mut Tape) -> Bindings {
        Surrogate::bind(self, tape)
    }
    fn pull_grads(&mut self, tape: &Tape, b: &Bindings) -> Result<()> {
        Surrogate::pull_grads(self, tape, b)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        Surrogate::tensors_mut(self)
    }
}

impl Trainable for Encoder {
    type Bindings = Bindings;
    fn bind(&self, tape: &mut Tape) -> Bindings {
        Encoder::bind(self, tape)
    }
    fn pull_grads(&mut self, tape: &Tape, b: &Bindings) -> Result<()> {
        Encoder::pull_grads(self, tape, b)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        Encoder::tensors_mut(self)
    }
}

impl Trainable for Vgg5 {
    type Bindings = Bound;
    fn bind(&self, tape: &mut Tape) -> Bound {
        Vgg5::bind(self, tape)
    }
    fn pull_grads(&mut self, tape: &Tape, b: &Bound) -> Result<()> {
        self.params_mut().pull_grads(tape, b)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut().tensors_mut().collect()
    }
}

fn finish(out: &Path, ckpt: Checkpoint, fitted: &Fitted<impl Clone>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let ckpt = ckpt
        .with_meta("seed", cfg.seed)
        .with_meta("epoch", fitted.best_epoch)
        .with_meta("val_metric", format!("{:e}", fitted.best_metric))
        .with_meta("config_hash", &cfg.config_hash);
    let path = out.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    write_logs(&out.join(LOG_FILE), &fitted.logs)?;
    Ok(TrainOutcome {
        checkpoint: path,
        logs: fitted.logs.clone(),
        best_epoch: fitted.best_epoch,
        best_metric: fitted.best_metric,
    })
}

fn inputs_of(ds: &PerceptDataset, idx: &[usize]) -> Tensor {
    let w = ds.in_h * ds.in_w;
    let shape = match ds.resolution {
        Resolution::Full28 => vec![idx.len(), 1, 28, 28],
        Resolution::Argus6x10 => vec![idx.len(), w],
    };
    Tensor::new(&shape, gather(&ds.inputs, w, idx)).expect("dataset rows")
}

fn surrogate_loss(m: &Surrogate, tape: &mut Tape, b: &Bindings, ds: &PerceptDataset, idx: &[usize]) -> Result<Var> {
    let x = tape.constant(inputs_of(ds, idx));
    let y = tape.constant(image_batch(&ds.targets, idx));
    let p = m.forward(tape, b, x)?;
    tape.mse_loss(p, y)
}

fn dataset_mse(m: &Surrogate, ds: &PerceptDataset) -> Result<f64> {
    let pred = surrogate_percepts(m, &ds.inputs)?;
    Ok(pred.iter().zip(&ds.targets).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Fits the implant model to rendered percepts with pixelwise MSE; at 6×10
/// the up-scaler trains jointly. Keeps the lowest-validation-MSE weights.
pub fn pretrain_surrogate(
    train: &PerceptDataset,
    val: &PerceptDataset,
    cfg: &TrainConfig,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.resolution != cfg.resolution || val.resolution != cfg.resolution {
        return Err(Error::input(format!("percept datasets do not match resolution {}", cfg.resolution)));
    }
    let mut model = Surrogate::new(cfg.resolution, cfg.seed);
    model.percept_scale = train.scale;
    let mean = train.targets.iter().map(|&v| v as f64).sum::<f64>() / train.targets.len().max(1) as f64;
    model.unet.set_output_mean(mean as f32);
    let fitted = fit(
        model,
        train.len(),
        &cfg.stage,
        cfg.seed,
        Goal::Minimize,
        |m, tape, b, idx| surrogate_loss(m, tape, b, train, idx),
        |m| dataset_mse(m, val),
        on_epoch,
    )?;
    finish(out, fitted.best.to_checkpoint().with_meta("val_mse", format!("{:e}", fitted.best_metric)), &fitted, cfg)
}

fn labels_of(set: &MnistSet) -> Vec<usize> {
    set.labels().iter().map(|&l| l as usize).collect()
}

/// Cross-entropy training of the digit classifier on original images.
/// Keeps the highest-validation-accuracy weights.
pub fn pretrain_classifier(
    train: &MnistSet,
    val: &MnistSet,
    cfg: &TrainConfig,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let (xs, ys) = (to_unit_interval(train.images()), labels_of(train));
    let (vx, vy) = (to_unit_interval(val.images()), labels_of(val));
    let fitted = fit(
        Vgg5::new(Vgg5Config::default(), cfg.seed),
        train.len(),
        &cfg.stage,
        cfg.seed,
        Goal::Maximize,
        |m, tape, b, idx| {
            let x = tape.constant(image_batch(&xs, idx));
            let logits = m.forward(tape, b, x)?;
            let labels: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            tape.softmax_cross_entropy(logits, &labels)
        },
        |m| micro_f1(&classify(m, &vx)?, &vy),
        on_epoch,
    )?;
    finish(out, super::nets::classifier_checkpoint(&fitted.best), &fitted, cfg)
}

/// Frozen networks an encoder trains through.
pub struct Frozen {
    pub surrogate: Surrogate,
    pub classifier: Option<Vgg5>,
}

impl Frozen {
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate_encoder()?;
        let path = cfg.surrogate.as_ref().expect("validated");
        let mut surrogate = Surrogate::load(path)?;
        if surrogate.resolution != cfg.resolution {
            return Err(Error::precondition(
                path,
                format!("surrogate was trained at {}, not {}", surrogate.resolution, cfg.resolution),
            ));
        }
        surrogate.freeze();
        let classifier = match (&cfg.classifier, cfg.loss) {
            (Some(p), LossKind::Ce) => {
                let mut c = load_classifier(p)?;
                c.params_mut().freeze();
                Some(c)
            }
            _ => None,
        };
        Ok(Self { surrogate, classifier })
    }

    /// SHA-256 of every frozen network's parameters.
    pub fn digests(&self) -> Vec<String> {
        let mut d = vec![self.surrogate.digest()];
        d.extend(self.classifier.as_ref().map(|c| c.params().digest()));
        d
    }
}

/// Encoder loss on a batch of images through the frozen networks.
pub fn encoder_loss(
    enc: &Encoder,
    frozen: &Frozen,
    loss: LossKind,
    tape: &mut Tape,
    b: &Bindings,
    images: &[f32],
    labels: &[usize],
    idx: &[usize],
) -> Result<Var> {
    let x = tape.constant(image_batch(images, idx));
    let s = enc.forward(tape, b, x)?;
    let sb = frozen.surrogate.bind(tape);
    let p = frozen.surrogate.forward(tape, &sb, s)?;
    match loss {
        LossKind::Mse => tape.mse_loss(p, x),
        LossKind::Ce => {
            let vgg = frozen.classifier.as_ref().ok_or_else(|| Error::State("no classifier loaded".into()))?;
            let vb = vgg.bind(tape);
            let logits = vgg.forward(tape, &vb, p)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            tape.softmax_cross_entropy(logits, &y)
        }
    }
}

/// Validation score of an encoder through the surrogate: percept-vs-image
/// MSE for MSE training, micro F1 for cross-entropy training.
fn encoder_score(enc: &Encoder, frozen: &Frozen, loss: LossKind, images: &[f32], labels: &[usize]) -> Result<f64> {
    let percepts = surrogate_percepts(&frozen.surrogate, &encode(enc, images)?)?;
    match loss {
        LossKind::Mse => {
            Ok(percepts.iter().zip(images).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / images.len() as f64)
        }
        LossKind::Ce => micro_f1(&classify(frozen.classifier.as_ref().expect("loaded"), &percepts)?, labels),
    }
}

/// Optimizes an encoder (and, at 6×10, the down-scaler) through the frozen
/// surrogate and classifier. Fails if any frozen parameter changed.
pub fn train_encoder(
    train: &MnistSet,
    val: &MnistSet,
    cfg: &TrainConfig,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let frozen = Frozen::load(cfg)?;
    let before = frozen.digests();
    let (xs, ys) = (to_unit_interval(train.images()), labels_of(train));
    let (vx, vy) = (to_unit_interval(val.images()), labels_of(val));
    let goal = match cfg.loss {
        LossKind::Mse => Goal::Minimize,
        LossKind::Ce => Goal::Maximize,
    };
    let fitted = fit(
        Encoder::new(cfg.resolution, cfg.seed),
        train.len(),
        &cfg.stage,
        cfg.seed,
        goal,
        |m, tape, b, idx| encoder_loss(m, &frozen, cfg.loss, tape, b, &xs, &ys, idx),
        |m| encoder_score(m, &frozen, cfg.loss, &vx, &vy),
        on_epoch,
    )?;

    let reloaded = Frozen::load(cfg)?.digests();
    let after = frozen.digests();
    if after != before || reloaded != before {
        return Err(Error::State("a frozen network changed during encoder training".into()));
    }
    let mut ckpt = fitted
        .best
        .to_checkpoint()
        .with_meta("loss", cfg.loss)
        .with_meta("surrogate_sha256", &before[0]);
    if let Some(c) = before.get(1) {
        ckpt = ckpt.with_meta("classifier_sha256", c);
    }
    finish(out, ckpt, &fitted, cfg)
}
