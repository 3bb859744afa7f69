use std::path::PathBuf;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::phosphene::{AxonMapParams, AxonMapRenderer, JansoniusParams, Trajectory};

use super::mnist::{fetch_mnist, load_mnist, split_5_1_1, FetchPolicy, FetchReport, MnistSet};
use super::percepts::{
    build_percept_dataset, cached_percepts, percept_renderer, BuildOutcome, PerceptDataset, Resolution, Split,
};

/// Train, validation and test digits after the seeded 5:1:1 split and any
/// configured size caps.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: MnistSet,
    pub val: MnistSet,
    pub test: MnistSet,
}

impl Splits {
    pub fn get(&self, split: Split) -> &MnistSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn mnist_dir(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join("mnist")
}

pub fn percept_dir(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join("percepts")
}

pub fn fetch(cfg: &RunConfig) -> Result<FetchReport> {
    fetch_mnist(&cfg.mirror, &mnist_dir(cfg), &cfg.mnist, FetchPolicy::default())
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let full = load_mnist(&mnist_dir(cfg), &cfg.mnist)?;
    let (train, val, test) = split_5_1_1(&full, cfg.seed)?;
    Ok(Splits {
        train: train.truncated(cfg.max_train),
        val: val.truncated(cfg.max_val),
        test: test.truncated(cfg.max_test),
    })
}

/// The configured trajectory; spiral bundles are grown once and shared.
pub fn trajectory(cfg: &RunConfig) -> Result<Trajectory> {
    Trajectory::build(cfg.render.trajectory, JansoniusParams::default())
}

pub fn renderer(cfg: &RunConfig, resolution: Resolution, trajectory: &Trajectory) -> Result<AxonMapRenderer> {
    let r = &cfg.render;
    let params = AxonMapParams::new(r.rho_um, r.lambda_um, r.segments, trajectory.clone())?;
    percept_renderer(resolution.grid_with(r.pitch_um, r.center_um)?, params)
}

pub fn percepts(
    cfg: &RunConfig,
    splits: &Splits,
    split: Split,
    resolution: Resolution,
    renderer: &AxonMapRenderer,
) -> Result<BuildOutcome> {
    build_percept_dataset(splits.get(split), split, resolution, renderer, &percept_dir(cfg))
}

/// A percept dataset that `data prepare` must already have cached.
pub fn load_percepts(
    cfg: &RunConfig,
    splits: &Splits,
    split: Split,
    resolution: Resolution,
    renderer: &AxonMapRenderer,
) -> Result<PerceptDataset> {
    cached_percepts(splits.get(split), split, resolution, renderer, &percept_dir(cfg)).map_err(|path| {
        Error::precondition(
            path,
            format!("no percept cache for the {} split at {resolution} with these settings; run `data prepare`", split.as_str()),
        )
    })
}
