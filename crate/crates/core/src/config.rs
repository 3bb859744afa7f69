//! Run configuration: `section.key = value` files merged with environment
//! and command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, environment, config file,
//! flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{MnistFile, Resolution, DATA_DIR_ENV, DEFAULT_MIRROR, MNIST_FILES};
use crate::error::{Error, Result};
use crate::phosphene::TrajectoryKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Ce,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "ce" => Ok(LossKind::Ce),
            other => Err(Error::Config(format!("unknown loss {other:?} (expected mse or ce)"))),
        }
    }
}

/// Optimization schedule of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl StageConfig {
    fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 64,
            lr: 1e-3,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub rho_um: f64,
    pub lambda_um: f64,
    pub segments: usize,
    pub trajectory: TrajectoryKind,
    /// Electrode pitch of the 6×10 array.
    pub pitch_um: f64,
    pub center_um: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub mirror: String,
    pub mnist: Vec<MnistFile>,
    /// Caps on split sizes after the 5:1:1 split; 0 keeps everything.
    pub max_train: usize,
    pub max_val: usize,
    pub max_test: usize,
    pub render: RenderConfig,
    pub surrogate: StageConfig,
    pub classifier: StageConfig,
    pub encoder: StageConfig,
    pub seed: u64,
    /// Parent of timestamped run directories.
    pub runs_root: PathBuf,
    /// Explicit run directory; empty means pick or create one under `runs_root`.
    pub run_dir: PathBuf,
    pub resolution: Resolution,
    pub loss: LossKind,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub cosine_per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            mirror: DEFAULT_MIRROR.to_string(),
            mnist: MNIST_FILES.iter().map(|(n, h)| MnistFile::new(n, h)).collect(),
            max_train: 0,
            max_val: 0,
            max_test: 0,
            render: RenderConfig {
                rho_um: 150.0,
                lambda_um: 500.0,
                segments: 64,
                trajectory: TrajectoryKind::Spiral,
                pitch_um: 525.0,
                center_um: (0.0, 0.0),
            },
            surrogate: StageConfig::with_epochs(20),
            classifier: StageConfig::with_epochs(10),
            encoder: StageConfig::with_epochs(20),
            seed: 42,
            runs_root: PathBuf::from("runs"),
            run_dir: PathBuf::new(),
            resolution: Resolution::Full28,
            loss: LossKind::Mse,
            threads: 0,
            cosine_per_class: 100,
        }
    }
}

const DIGEST_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Config(format!("{key} must be positive")));
    }
    Ok(v)
}

impl RunConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if let Some(stage) = key.strip_prefix("train.") {
            let (name, field) = stage
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
            let s = match name {
                "surrogate" => &mut self.surrogate,
                "classifier" => &mut self.classifier,
                "encoder" => &mut self.encoder,
                _ => return Err(Error::Config(format!("unknown training stage in {key}"))),
            };
            match field {
                "epochs" => s.epochs = positive(key, parse(key, value)?)?,
                "batch_size" => s.batch_size = positive(key, parse(key, value)?)?,
                "lr" => s.lr = parse(key, value)?,
                "patience" => s.patience = positive(key, parse(key, value)?)?,
                _ => return Err(Error::Config(format!("unknown key {key}"))),
            }
            return Ok(());
        }
        if let Some(which) = key.strip_prefix("data.sha256.") {
            let i = DIGEST_KEYS
                .iter()
                .position(|k| *k == which)
                .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
            if value.len() != 64 || !value.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::Config(format!("{key}: not a SHA-256 hex digest")));
            }
            self.mnist[i].sha256 = value.to_ascii_lowercase();
            return Ok(());
        }
        match key {
            "data.dir" => self.data_dir = PathBuf::from(value),
            "data.mirror" => self.mirror = value.to_string(),
            "data.max_train" => self.max_train = parse(key, value)?,
            "data.max_val" => self.max_val = parse(key, value)?,
            "data.max_test" => self.max_test = parse(key, value)?,
            "render.rho_um" => self.render.rho_um = parse(key, value)?,
            "render.lambda_um" => self.render.lambda_um = parse(key, value)?,
            "render.segments" => self.render.segments = parse(key, value)?,
            "render.trajectory" => {
                self.render.trajectory = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "grid.pitch_um" => self.render.pitch_um = parse(key, value)?,
            "grid.center_x_um" => self.render.center_um.0 = parse(key, value)?,
            "grid.center_y_um" => self.render.center_um.1 = parse(key, value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.root" => self.runs_root = PathBuf::from(value),
            "run.dir" => self.run_dir = PathBuf::from(value),
            "run.resolution" => self.resolution = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "run.loss" => self.loss = value.parse()?,
            "run.threads" => self.threads = parse(key, value)?,
            "eval.cosine_per_class" => self.cosine_per_class = positive(key, parse(key, value)?)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Merges defaults, `env`, an optional config file and flag overrides.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: &[(&str, String)],
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(dir) = env(DATA_DIR_ENV) {
            cfg.data_dir = PathBuf::from(dir);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::precondition(path, e.to_string()))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.render;
        if !(r.rho_um > 0.0 && r.lambda_um > 0.0 && r.pitch_um > 0.0) {
            return Err(Error::Config("render.rho_um, render.lambda_um and grid.pitch_um must be positive".into()));
        }
        if r.segments < 2 {
            return Err(Error::Config("render.segments must be at least 2".into()));
        }
        Ok(())
    }

    /// Every setting as sorted `key = value` lines; applying it to the
    /// defaults reproduces this config.
    pub fn snapshot(&self) -> String {
        let mut lines = vec![
            format!("data.dir = {}", self.data_dir.display()),
            format!("data.mirror = {}", self.mirror),
            format!("data.max_train = {}", self.max_train),
            format!("data.max_val = {}", self.max_val),
            format!("data.max_test = {}", self.max_test),
            format!("render.rho_um = {:?}", self.render.rho_um),
            format!("render.lambda_um = {:?}", self.render.lambda_um),
            format!("render.segments = {}", self.render.segments),
            format!("render.trajectory = {}", self.render.trajectory.as_str()),
            format!("grid.pitch_um = {:?}", self.render.pitch_um),
            format!("grid.center_x_um = {:?}", self.render.center_um.0),
            format!("grid.center_y_um = {:?}", self.render.center_um.1),
            format!("run.seed = {}", self.seed),
            format!("run.root = {}", self.runs_root.display()),
            format!("run.dir = {}", self.run_dir.display()),
            format!("run.resolution = {}", self.resolution),
            format!("run.loss = {}", self.loss),
            format!("run.threads = {}", self.threads),
            format!("eval.cosine_per_class = {}", self.cosine_per_class),
        ];
        for (k, f) in DIGEST_KEYS.iter().zip(&self.mnist) {
            lines.push(format!("data.sha256.{k} = {}", f.sha256));
        }
        for (name, s) in [("surrogate", &self.surrogate), ("classifier", &self.classifier), ("encoder", &self.encoder)] {
            lines.push(format!("train.{name}.epochs = {}", s.epochs));
            lines.push(format!("train.{name}.batch_size = {}", s.batch_size));
            lines.push(format!("train.{name}.lr = {:?}", s.lr));
            lines.push(format!("train.{name}.patience = {}", s.patience));
        }
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// SHA-256 of the settings that affect results (paths and thread count
    /// excluded).
    pub fn hash(&self) -> String {
        let text: String = self
            .snapshot()
            .lines()
            .filter(|l| !["data.dir", "run.root", "run.dir", "run.threads", "data.mirror"].iter().any(|k| l.starts_with(&format!("{k} "))))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("render.rho_um = 200 # wider\ntrain.encoder.epochs=3\nrun.loss = ce\n\n# note\n").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.snapshot()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render.rho_um, 200.0);
        assert_eq!(back.encoder.epochs, 3);
    }

    #[test]
    fn precedence_is_flags_then_file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "run.seed = 5\ndata.dir = from-file\n").unwrap();
        let env = |k: &str| (k == DATA_DIR_ENV).then(|| "from-env".to_string());

        let only_env = RunConfig::resolve(None, env, &[]).unwrap();
        assert_eq!(only_env.data_dir, PathBuf::from("from-env"));
        let with_file = RunConfig::resolve(Some(&file), env, &[]).unwrap();
        assert_eq!((with_file.data_dir.to_str(), with_file.seed), (Some("from-file"), 5));
        let flagged = RunConfig::resolve(Some(&file), env, &[("run.seed", "9".into())]).unwrap();
        assert_eq!(flagged.seed, 9);
    }

    #[test]
    fn bad_lines_are_config_errors() {
        let mut cfg = RunConfig::default();
        for text in ["render.rho_um 150", "nope.key = 1", "run.loss = l1", "train.encoder.epochs = 0"] {
            assert!(matches!(cfg.apply_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.data_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
