use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{LossKind, RunConfig};
use crate::data::{self, to_unit_interval, MnistSet, Resolution, Split, Splits};
use crate::error::{Error, Result};
use crate::eval::{
    class_cosine_matrix, emit_report, laplacian_filter, micro_f1, psnr, ssim, weighted_f1, F1Row, GalleryRow,
    MetricsReport, QualityRow, CLASSES, REPORT_FILE,
};
use crate::models::Vgg5;
use crate::phosphene::Trajectory;

use super::fit::EpochLog;
use super::infer::{classify, encode, render_percepts, surrogate_percepts};
use super::nets::{load_classifier, Encoder, Surrogate};
use super::stages::{pretrain_classifier, pretrain_surrogate, train_encoder, TrainConfig, TrainOutcome, CHECKPOINT_FILE};

pub const CONFIG_FILE: &str = "config.txt";
const RESOLUTIONS: [Resolution; 2] = [Resolution::Full28, Resolution::Argus6x10];
const LOSSES: [LossKind; 2] = [LossKind::Mse, LossKind::Ce];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Surrogate(Resolution),
    Classifier,
    Encoder(Resolution, LossKind),
    Eval,
}

impl Stage {
    pub fn dir_name(&self) -> String {
        match self {
            Stage::Surrogate(r) => format!("surrogate-{r}"),
            Stage::Classifier => "classifier".into(),
            Stage::Encoder(r, l) => format!("encoder-{r}-{l}"),
            Stage::Eval => "eval".into(),
        }
    }

    fn output(&self) -> &'static str {
        match self {
            Stage::Eval => REPORT_FILE,
            _ => CHECKPOINT_FILE,
        }
    }
}

/// A run directory: one subdirectory per stage plus a config snapshot.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
}

fn run_stamp(name: &str, seed: u64) -> Option<u64> {
    name.strip_suffix(&format!("-seed{seed}"))?.parse().ok()
}

impl Run {
    /// The configured run directory, else the newest `<unix time>-seed<seed>`
    /// under the runs root. With `create`, a fresh one is made when none exists.
    pub fn open(cfg: &RunConfig, create: bool) -> Result<Self> {
        let dir = if !cfg.run_dir.as_os_str().is_empty() {
            cfg.run_dir.clone()
        } else {
            let latest = fs::read_dir(&cfg.runs_root)
                .into_iter()
                .flatten()
                .flatten()
                .filter_map(|e| Some((run_stamp(e.file_name().to_str()?, cfg.seed)?, e.path())))
                .max();
            match (latest, create) {
                (Some((_, p)), _) => p,
                (None, true) => {
                    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                    cfg.runs_root.join(format!("{now}-seed{}", cfg.seed))
                }
                (None, false) => {
                    return Err(Error::precondition(
                        &cfg.runs_root,
                        format!("no run directory for seed {}; run pretrain-surrogate first", cfg.seed),
                    ))
                }
            }
        };
        if !create && !dir.is_dir() {
            return Err(Error::precondition(&dir, "run directory does not exist"));
        }
        fs::create_dir_all(&dir)?;
        let snap = dir.join(CONFIG_FILE);
        if !snap.exists() {
            fs::write(snap, cfg.snapshot())?;
        }
        Ok(Self { dir })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.dir_name())
    }

    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join(CHECKPOINT_FILE)
    }

    /// Creates a stage directory with its config snapshot. Completed stages
    /// are never overwritten.
    pub fn begin(&self, stage: Stage, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.join(stage.output()).exists() {
            return Err(Error::Config(format!(
                "{} already holds a finished {} stage; pass a new --run-dir",
                self.dir.display(),
                stage.dir_name()
            )));
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.snapshot())?;
        Ok(dir)
    }

    fn require(&self, stage: Stage, hint: &str) -> Result<PathBuf> {
        let p = self.checkpoint(stage);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::precondition(p, format!("checkpoint missing; run {hint}")))
        }
    }
}

fn train_config(cfg: &RunConfig, resolution: Resolution, loss: LossKind, stage: &crate::config::StageConfig) -> TrainConfig {
    TrainConfig {
        resolution,
        loss,
        stage: stage.clone(),
        seed: cfg.seed,
        surrogate: None,
        classifier: None,
        config_hash: cfg.hash(),
    }
}

pub fn run_pretrain_surrogate(
    cfg: &RunConfig,
    run: &Run,
    resolution: Resolution,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let splits = data::load_splits(cfg)?;
    let traj = data::trajectory(cfg)?;
    let renderer = data::renderer(cfg, resolution, &traj)?;
    let train = data::load_percepts(cfg, &splits, Split::Train, resolution, &renderer)?;
    let val = data::load_percepts(cfg, &splits, Split::Val, resolution, &renderer)?;
    let out = run.begin(Stage::Surrogate(resolution), cfg)?;
    let tc = train_config(cfg, resolution, cfg.loss, &cfg.surrogate);
    pretrain_surrogate(&train, &val, &tc, &out, on_epoch)
}

pub fn run_pretrain_classifier(cfg: &RunConfig, run: &Run, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let splits = data::load_splits(cfg)?;
    let out = run.begin(Stage::Classifier, cfg)?;
    let tc = train_config(cfg, Resolution::Full28, LossKind::Ce, &cfg.classifier);
    pretrain_classifier(&splits.train, &splits.val, &tc, &out, on_epoch)
}

pub fn run_train_encoder(
    cfg: &RunConfig,
    run: &Run,
    resolution: Resolution,
    loss: LossKind,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut tc = train_config(cfg, resolution, loss, &cfg.encoder);
    tc.surrogate = Some(run.require(Stage::Surrogate(resolution), "pretrain-surrogate")?);
    if loss == LossKind::Ce {
        tc.classifier = Some(run.require(Stage::Classifier, "pretrain-classifier")?);
    }
    let splits = data::load_splits(cfg)?;
    let out = run.begin(Stage::Encoder(resolution, loss), cfg)?;
    train_encoder(&splits.train, &splits.val, &tc, &out, on_epoch)
}

fn labels(set: &MnistSet) -> Vec<usize> {
    set.labels().iter().map(|&l| l as usize).collect()
}

fn f1_row(resolution: Resolution, method: &str, preds: &[usize], labels: &[usize]) -> Result<F1Row> {
    Ok(F1Row {
        resolution,
        method: method.into(),
        micro_f1: micro_f1(preds, labels)?,
        weighted_f1: weighted_f1(preds, labels)?,
        surrogate: None,
    })
}

/// The no-encoder rows: the image itself (28×28) or its area-averaged
/// downsample (6×10) rendered by the true renderer and classified.
pub fn baseline_eval(
    cfg: &RunConfig,
    splits: &Splits,
    traj: &Trajectory,
    resolution: Resolution,
    classifier: &Vgg5,
) -> Result<F1Row> {
    let renderer = data::renderer(cfg, resolution, traj)?;
    let test = data::load_percepts(cfg, splits, Split::Test, resolution, &renderer)?;
    let method = match resolution {
        Resolution::Full28 => "none",
        Resolution::Argus6x10 => "downsampled",
    };
    f1_row(resolution, method, &classify(classifier, &test.targets)?, &labels(&splits.test))
}

/// Test-split outputs of one trained encoder.
struct EncoderEval {
    stimuli: Vec<f32>,
    percepts: Vec<f32>,
    row: F1Row,
}

fn eval_encoder(
    cfg: &RunConfig,
    run: &Run,
    traj: &Trajectory,
    images: &[f32],
    y: &[usize],
    classifier: &Vgg5,
    resolution: Resolution,
    loss: LossKind,
) -> Result<EncoderEval> {
    let enc = Encoder::load(&run.checkpoint(Stage::Encoder(resolution, loss)))?;
    let sur = Surrogate::load(&run.require(Stage::Surrogate(resolution), "pretrain-surrogate")?)?;
    let stimuli = encode(&enc, images)?;
    let via_surrogate = classify(classifier, &surrogate_percepts(&sur, &stimuli)?)?;
    let renderer = data::renderer(cfg, resolution, traj)?;
    let percepts = render_percepts(&renderer, &stimuli, sur.percept_scale);
    let mut row = f1_row(resolution, &format!("unet-{loss}"), &classify(classifier, &percepts)?, y)?;
    row.surrogate = Some((micro_f1(&via_surrogate, y)?, weighted_f1(&via_surrogate, y)?));
    Ok(EncoderEval { stimuli, percepts, row })
}

fn mean_quality(comparison: String, pairs: impl Iterator<Item = (Vec<f32>, Vec<f32>)>) -> Result<QualityRow> {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in pairs {
        p += psnr(&a, &b)?;
        s += ssim(&a, &b, 28, 28)?;
        n += 1;
    }
    Ok(QualityRow {
        comparison,
        psnr_db: p / n as f64,
        ssim: s / n as f64,
    })
}

fn rows(data: &[f32], width: usize) -> impl Iterator<Item = Vec<f32>> + '_ {
    data.chunks(width).map(<[f32]>::to_vec)
}

/// Scores every trained encoder present in the run plus both baselines on
/// the test split, writes `report.txt` and the emitted files to the eval
/// stage directory.
pub fn run_eval(cfg: &RunConfig, run: &Run, mut note: impl FnMut(&str)) -> Result<MetricsReport> {
    let classifier = load_classifier(&run.require(Stage::Classifier, "pretrain-classifier")?)?;
    let splits = data::load_splits(cfg)?;
    let traj = data::trajectory(cfg)?;
    let images = to_unit_interval(splits.test.images());
    let y = labels(&splits.test);

    let mut f1 = Vec::new();
    let mut encoded = Vec::new();
    for res in RESOLUTIONS {
        note(&format!("baseline {res}"));
        f1.push(baseline_eval(cfg, &splits, &traj, res, &classifier)?);
        for loss in LOSSES {
            if !run.checkpoint(Stage::Encoder(res, loss)).exists() {
                note(&format!("skipping encoder {res} {loss}: no checkpoint"));
                continue;
            }
            note(&format!("encoder {res} {loss}"));
            let e = eval_encoder(cfg, run, &traj, &images, &y, &classifier, res, loss)?;
            f1.push(e.row.clone());
            encoded.push((res, loss, e));
        }
    }
    let find = |res, loss| encoded.iter().find(|(r, l, _)| *r == res && *l == loss).map(|(_, _, e)| e);

    let laplacian: Vec<f32> = rows(&images, 784).flat_map(|im| laplacian_filter(&im, 28, 28)).collect();
    let mut quality = Vec::new();
    for loss in LOSSES {
        if let Some(e) = find(Resolution::Full28, loss) {
            quality.push(mean_quality(format!("{loss}:stimulus-original"), rows(&e.stimuli, 784).zip(rows(&images, 784)))?);
            quality.push(mean_quality(format!("{loss}:stimulus-laplacian"), rows(&e.stimuli, 784).zip(rows(&laplacian, 784)))?);
        }
    }
    quality.push(mean_quality("original-laplacian".into(), rows(&images, 784).zip(rows(&laplacian, 784)))?);

    let mut cosine = Vec::new();
    let mut gallery = Vec::new();
    let firsts: Vec<usize> = (0..CLASSES).filter_map(|c| y.iter().position(|&l| l == c)).collect();
    for loss in LOSSES {
        let Some(e6) = find(Resolution::Argus6x10, loss) else { continue };
        let stims: Vec<Vec<f32>> = rows(&e6.stimuli, 60).collect();
        cosine.push((loss, class_cosine_matrix(&stims, &y, cfg.cosine_per_class, cfg.seed)?));
        let Some(e28) = find(Resolution::Full28, loss) else { continue };
        let pick = |v: &[f32], w: usize, i: usize| v[i * w..(i + 1) * w].to_vec();
        gallery.push((
            loss,
            firsts
                .iter()
                .map(|&i| GalleryRow {
                    label: y[i],
                    original: pick(&images, 784, i),
                    stimulus_28: pick(&e28.stimuli, 784, i),
                    percept_28: pick(&e28.percepts, 784, i),
                    stimulus_6x10: pick(&e6.stimuli, 60, i),
                    percept_6x10: pick(&e6.percepts, 784, i),
                })
                .collect(),
        ));
    }
    let report = MetricsReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        f1,
        quality,
        cosine,
        gallery,
    };
    let out = run.begin(Stage::Eval, cfg)?;
    report.save(&out)?;
    emit_report(&report, &out)?;
    Ok(report)
}

/// Every stage in order: surrogates, classifier, four encoders, eval.
pub fn run_all(
    cfg: &RunConfig,
    run: &Run,
    mut note: impl FnMut(&str),
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<MetricsReport> {
    let done = |note: &mut dyn FnMut(&str), o: TrainOutcome| {
        note(&format!("best epoch {}, validation {:.6e}", o.best_epoch, o.best_metric))
    };
    for res in RESOLUTIONS {
        note(&format!("pretrain-surrogate {res}"));
        done(&mut note, run_pretrain_surrogate(cfg, run, res, &mut on_epoch)?);
    }
    note("pretrain-classifier");
    done(&mut note, run_pretrain_classifier(cfg, run, &mut on_epoch)?);
    for res in RESOLUTIONS {
        for loss in LOSSES {
            note(&format!("train-encoder {res} {loss}"));
            done(&mut note, run_train_encoder(cfg, run, res, loss, &mut on_epoch)?);
        }
    }
    run_eval(cfg, run, note)
}

/// Reads a stage's log CSV back as rows.
pub fn read_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::format(format!("bad log line `{line}`")))
            };
            Ok(EpochLog {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_metric: num(2)?,
                seconds: num(3)?,
            })
        })
        .collect()
}
