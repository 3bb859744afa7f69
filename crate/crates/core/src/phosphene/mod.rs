//! Ground-truth phosphene rendering: scoreboard and axon-map models mapping
//! electrode amplitudes to a retinal brightness map.
//!
//! Coordinates are micrometers with the fovea at the origin and the optic
//! disc at positive x. Rows of a window or electrode grid run along +y.

mod axon;
mod geometry;
mod golden;
mod image;
mod render;

pub use axon::{axon_path, AxonBundles, AxonPath, JansoniusParams, Trajectory, TrajectoryKind};
pub use geometry::{ElectrodeGrid, Percept, RetinalWindow, Stimulus};
pub use golden::{normalized_cross_correlation, FrameSet, PCPT_MAGIC};
pub use image::{global_max, normalize_percepts, resize_bilinear};
pub use render::{render_axon_map, render_scoreboard, AxonMapParams, AxonMapRenderer};

/// Native render resolution before resizing to the network input size.
pub const NATIVE_RESOLUTION: usize = 56;
/// Side length of percepts fed to the networks.
pub const PERCEPT_SIDE: usize = 28;
