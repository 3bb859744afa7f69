//! MNIST acquisition, splitting, stimulus downsampling and the cached
//! image→percept corpus used to pretrain the surrogate.

mod mnist;
mod percepts;
mod prepare;

pub use mnist::{
    fetch_mnist, load_mnist, parse_idx, read_gz, split_5_1_1, split_indices, FetchPolicy, FetchReport, Idx, MnistFile, MnistSet,
    DEFAULT_MIRROR, MNIST_FILES,
};
pub use percepts::{
    area_resample, build_percept_dataset, cached_percepts, raw_percept, downsample_6x10, params_hash, percept_renderer, to_unit_interval,
    BuildOutcome, PerceptDataset, Resolution, Split, PDST_MAGIC, PDST_VERSION,
};
pub use prepare::{fetch, load_percepts, load_splits, mnist_dir, percept_dir, percepts, renderer, trajectory, Splits};

/// Environment variable overriding the data directory.
pub const DATA_DIR_ENV: &str = "PERCEPT_DATA_DIR";

#[cfg(test)]
mod tests;
