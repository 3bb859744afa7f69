use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phosphene::{
    resize_bilinear, AxonMapParams, AxonMapRenderer, ElectrodeGrid, Percept, RetinalWindow, Trajectory,
    NATIVE_RESOLUTION, PERCEPT_SIDE,
};

use super::mnist::MnistSet;

pub const PDST_MAGIC: &[u8; 8] = b"PDST0001";
pub const PDST_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 6 * 4 + 32;

/// Electrode-array resolution of the stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resolution {
    Full28,
    Argus6x10,
}

impl Resolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::Full28 => "28x28",
            Resolution::Argus6x10 => "6x10",
        }
    }

    pub fn grid(&self) -> ElectrodeGrid {
        match self {
            Resolution::Full28 => ElectrodeGrid::dense_28(),
            Resolution::Argus6x10 => ElectrodeGrid::argus_ii(),
        }
    }

    /// Grid for an arbitrary 6×10 pitch; the 28×28 array spans the same
    /// width, so its pitch is `9·pitch/27`.
    pub fn grid_with(&self, pitch_6x10: f64, center: (f64, f64)) -> Result<ElectrodeGrid> {
        let (rows, cols) = self.dims();
        let pitch = match self {
            Resolution::Full28 => 9.0 * pitch_6x10 / 27.0,
            Resolution::Argus6x10 => pitch_6x10,
        };
        ElectrodeGrid::new(rows, cols, pitch, center)
    }

    /// (rows, cols) of a stimulus.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Resolution::Full28 => (28, 28),
            Resolution::Argus6x10 => (6, 10),
        }
    }

    /// The stimulus an image is shown as before any encoder: the image itself
    /// or its area-averaged 6×10 version.
    pub fn stimulus_of(&self, image: &[f32]) -> Vec<f32> {
        match self {
            Resolution::Full28 => image.to_vec(),
            Resolution::Argus6x10 => downsample_6x10(image),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "28x28" => Ok(Resolution::Full28),
            "6x10" => Ok(Resolution::Argus6x10),
            other => Err(Error::input(format!("unknown resolution {other:?} (expected 28x28 or 6x10)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

pub fn to_unit_interval(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Row `i` holds the fraction of each source cell covered by output cell
/// `i`, divided by the output cell's extent.
fn area_weights(n: usize, out: usize) -> Vec<Vec<f64>> {
    let scale = n as f64 / out as f64;
    (0..out)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            (0..n)
                .map(|k| ((hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0)) / scale)
                .collect()
        })
        .collect()
}

/// Area-averaging resample of a row-major `h×w` image to `out_h×out_w`.
pub fn area_resample(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "image size");
    let (wy, wx) = (area_weights(h, out_h), area_weights(w, out_w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for ry in &wy {
        for rx in &wx {
            let mut acc = 0.0f64;
            for (r, &a) in ry.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &src[r * w..(r + 1) * w];
                acc += a * row.iter().zip(rx).map(|(&v, &b)| v as f64 * b).sum::<f64>();
            }
            out.push(acc as f32);
        }
    }
    out
}

pub fn downsample_6x10(image: &[f32]) -> Vec<f32> {
    area_resample(image, 28, 28, 6, 10)
}

/// Renderer for a stimulus resolution: the window covers the array plus a
/// `2ρ` margin at the native resolution.
pub fn percept_renderer(grid: ElectrodeGrid, params: AxonMapParams) -> Result<AxonMapRenderer> {
    let window = RetinalWindow::around(&grid, params.rho, NATIVE_RESOLUTION)?;
    AxonMapRenderer::new(grid, window, params)
}

/// Digest of everything that determines a cached dataset: renderer geometry
/// and parameters, target size, and the source images.
pub fn params_hash(renderer: &AxonMapRenderer, images: &MnistSet) -> [u8; 32] {
    let (g, w, p) = (renderer.grid(), renderer.window(), renderer.params());
    let trajectory = match &p.trajectory {
        Trajectory::StraightToDisc { disc } => format!("straight {disc:?}"),
        Trajectory::Spiral(b) => format!("spiral {:?}", b.params()),
    };
    let mut h = Sha256::new();
    h.update(format!(
        "grid {} {} {:?} {:?}\nwindow {:?} {} {:?}\nrho {:?} lambda {:?} segments {}\ntrajectory {trajectory}\nout {PERCEPT_SIDE}\n",
        g.rows(),
        g.cols(),
        g.pitch(),
        g.center(),
        w.half_extent(),
        w.resolution(),
        w.center(),
        p.rho,
        p.lambda,
        p.segments_per_axon,
    ));
    h.update(Sha256::digest(images.images()));
    h.update(Sha256::digest(images.labels()));
    h.finalize().into()
}

/// Stimulus images paired with their normalized 28×28 percepts.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptDataset {
    pub resolution: Resolution,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub params_hash: [u8; 32],
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    /// Raw-percept maximum the targets were divided by.
    pub scale: f32,
}

impl PerceptDataset {
    pub fn len(&self) -> usize {
        self.inputs.len() / (self.in_h * self.in_w)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.in_h * self.in_w;
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let n = self.out_h * self.out_w;
        &self.targets[i * n..(i + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.inputs.len() + self.targets.len()));
        out.extend_from_slice(PDST_MAGIC);
        for v in [PDST_VERSION as usize, self.len(), self.in_h, self.in_w, self.out_h, self.out_w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.params_hash);
        for v in self.inputs.iter().chain(&self.targets) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a cache file body; `resolution` and `scale` are not stored in
    /// it and are supplied by the caller.
    pub fn from_bytes(bytes: &[u8], resolution: Resolution, scale: f32) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != PDST_MAGIC {
            return Err(Error::format("not a PDST file"));
        }
        let u = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
        let (version, count, in_h, in_w, out_h, out_w) = (u(0), u(1), u(2), u(3), u(4), u(5));
        if version != PDST_VERSION as usize {
            return Err(Error::Version {
                found: version as u32,
                expected: PDST_VERSION,
            });
        }
        if (in_h, in_w) != resolution.dims() {
            return Err(Error::format(format!("cache holds {in_h}x{in_w} inputs, not {resolution}")));
        }
        let (ni, nt) = (count * in_h * in_w, count * out_h * out_w);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * (ni + nt) {
            return Err(Error::format(format!("PDST body is {} bytes, expected {}", body.len(), 4 * (ni + nt))));
        }
        let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let (inputs, targets) = floats.split_at(ni);
        Ok(Self {
            resolution,
            in_h,
            in_w,
            out_h,
            out_w,
            params_hash: bytes[32..64].try_into().unwrap(),
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            scale,
        })
    }
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub dataset: PerceptDataset,
    /// Number of percepts rendered (zero on a cache hit).
    pub rendered: usize,
    pub path: PathBuf,
}

fn cache_paths(dir: &Path, split: Split, resolution: Resolution) -> (PathBuf, PathBuf) {
    let stem = format!("percepts_{}_{}", split.as_str(), resolution.as_str());
    (dir.join(format!("{stem}.pdst")), dir.join(format!("{stem}.scale")))
}

fn read_cache(dir: &Path, split: Split, resolution: Resolution, hash: &[u8; 32]) -> Option<PerceptDataset> {
    let (data, side) = cache_paths(dir, split, resolution);
    let scale: f32 = fs::read_to_string(side).ok()?.trim().parse().ok()?;
    let mut f = fs::File::open(&data).ok()?;
    let mut head = [0u8; HEADER_LEN];
    std::io::Read::read_exact(&mut f, &mut head).ok()?;
    if &head[32..64] != hash {
        return None;
    }
    PerceptDataset::from_bytes(&fs::read(&data).ok()?, resolution, scale).ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("part");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Renders one stimulus and resizes it to the network percept size.
pub fn raw_percept(renderer: &AxonMapRenderer, stimulus: &[f32]) -> Vec<f32> {
    let n = renderer.window().resolution();
    let native = Percept::new(n, n, renderer.render_amplitudes(stimulus)).expect("renderer output is a valid percept");
    resize_bilinear(&native, PERCEPT_SIDE, PERCEPT_SIDE)
        .expect("native window is at least 2 pixels")
        .into_data()
}

/// The cached dataset if present and built from identical parameters;
/// otherwise the path it was expected at.
pub fn cached_percepts(
    images: &MnistSet,
    split: Split,
    resolution: Resolution,
    renderer: &AxonMapRenderer,
    cache_dir: &Path,
) -> std::result::Result<PerceptDataset, PathBuf> {
    let hash = params_hash(renderer, images);
    read_cache(cache_dir, split, resolution, &hash).ok_or_else(|| cache_paths(cache_dir, split, resolution).0)
}

/// Loads the cached percept corpus for `images` or renders and caches it.
/// Targets are divided by the largest raw percept value over the whole
/// split.
pub fn build_percept_dataset(
    images: &MnistSet,
    split: Split,
    resolution: Resolution,
    renderer: &AxonMapRenderer,
    cache_dir: &Path,
) -> Result<BuildOutcome> {
    if (renderer.grid().rows(), renderer.grid().cols()) != resolution.dims() {
        return Err(Error::input(format!("renderer grid does not match {resolution}")));
    }
    let hash = params_hash(renderer, images);
    let (path, side) = cache_paths(cache_dir, split, resolution);
    if let Some(dataset) = read_cache(cache_dir, split, resolution, &hash) {
        return Ok(BuildOutcome {
            dataset,
            rendered: 0,
            path,
        });
    }

    let (in_h, in_w) = resolution.dims();
    let pixels = MnistSet::PIXELS;
    let inputs: Vec<f32> = (0..images.len())
        .into_par_iter()
        .flat_map_iter(|i| resolution.stimulus_of(&to_unit_interval(images.image(i))))
        .collect();
    let mut targets: Vec<f32> = inputs
        .par_chunks(in_h * in_w)
        .flat_map_iter(|s| raw_percept(renderer, s))
        .collect();
    let scale = targets.iter().copied().fold(0.0f32, f32::max);
    if scale > 0.0 {
        targets.iter_mut().for_each(|v| *v /= scale);
    }
    debug_assert_eq!(targets.len(), images.len() * pixels);

    let dataset = PerceptDataset {
        resolution,
        in_h,
        in_w,
        out_h: PERCEPT_SIDE,
        out_w: PERCEPT_SIDE,
        params_hash: hash,
        inputs,
        targets,
        scale,
    };
    fs::create_dir_all(cache_dir)?;
    write_atomic(&side, format!("{scale:e}\n").as_bytes())?;
    write_atomic(&path, &dataset.to_bytes())?;
    Ok(BuildOutcome {
        rendered: images.len(),
        dataset,
        path,
    })
}
