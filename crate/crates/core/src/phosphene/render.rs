use rayon::prelude::*;

use crate::error::{Error, Result};

use super::axon::{axon_path, Trajectory};
use super::geometry::{ElectrodeGrid, Percept, RetinalWindow, Stimulus};

#[derive(Debug, Clone)]
pub struct AxonMapParams {
    /// Radial current spread, µm.
    pub rho: f64,
    /// Decay length along the axon, µm.
    pub lambda: f64,
    pub segments_per_axon: usize,
    pub trajectory: Trajectory,
}

impl AxonMapParams {
    pub fn new(rho: f64, lambda: f64, segments_per_axon: usize, trajectory: Trajectory) -> Result<Self> {
        let p = Self {
            rho,
            lambda,
            segments_per_axon,
            trajectory,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::input(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.segments_per_axon < 2 {
            return Err(Error::input("segments_per_axon must be at least 2"));
        }
        Ok(())
    }
}

fn gaussian(d2: f64, rho: f64) -> f64 {
    (-d2 / (2.0 * rho * rho)).exp()
}

/// `I(q) = Σ_j a_j exp(−‖q − e_j‖² / 2ρ²)` at every window pixel.
pub fn render_scoreboard(stim: &Stimulus, window: &RetinalWindow, rho: f64) -> Result<Percept> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::input(format!("rho must be positive, got {rho}")));
    }
    let grid = stim.grid();
    let n = window.resolution();
    let mut out = vec![0.0f32; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            let (x, y) = window.pixel(i, j);
            let mut acc = 0.0;
            for r in 0..grid.rows() {
                for c in 0..grid.cols() {
                    let a = stim.amplitude(r, c) as f64;
                    if a != 0.0 {
                        let (ex, ey) = grid.position(r, c);
                        acc += a * gaussian((x - ex).powi(2) + (y - ey).powi(2), rho);
                    }
                }
            }
            *v = acc as f32;
        }
    });
    Percept::new(n, n, out)
}

/// Electrode contributions below this fraction of the peak are not summed.
const KERNEL_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct Segment {
    decay: f64,
    r0: u32,
    nr: u32,
    c0: u32,
    nc: u32,
    /// Offset of `gy[nr]` followed by `gx[nc]` in the weight table.
    off: u32,
}

/// Axon-map renderer with all stimulus-independent geometry precomputed
/// for one electrode grid, window and parameter set.
#[derive(Debug, Clone)]
pub struct AxonMapRenderer {
    grid: ElectrodeGrid,
    window: RetinalWindow,
    params: AxonMapParams,
    /// Per pixel, the range of its segments in `segments`.
    pixel_start: Vec<u32>,
    segments: Vec<Segment>,
    weights: Vec<f64>,
}

impl AxonMapRenderer {
    pub fn new(grid: ElectrodeGrid, window: RetinalWindow, params: AxonMapParams) -> Result<Self> {
        params.validate()?;
        let n = window.resolution();
        let reach = params.rho * (2.0 * (1.0 / KERNEL_CUTOFF).ln()).sqrt();
        let max_arc = 3.0 * params.lambda;
        // One index range [lo, hi) of electrodes within `reach` of coordinate v.
        let span = |v: f64, first: f64, count: usize| -> (u32, u32) {
            let p = grid.pitch();
            let lo = ((v - reach - first) / p).ceil().max(0.0);
            let hi = ((v + reach - first) / p).floor() + 1.0;
            let hi = hi.min(count as f64);
            if hi <= lo {
                (0, 0)
            } else {
                (lo as u32, (hi - lo) as u32)
            }
        };

        let per_pixel: Vec<(Vec<Segment>, Vec<f64>)> = (0..n * n)
            .into_par_iter()
            .map(|p| {
                let q = window.pixel(p / n, p % n);
                let path = axon_path(q, &params.trajectory);
                let mut segs = Vec::new();
                let mut w = Vec::new();
                for ((x, y), s) in path.sample(params.segments_per_axon, max_arc) {
                    let (r0, nr) = span(y, grid.y(0), grid.rows());
                    let (c0, nc) = span(x, grid.x(0), grid.cols());
                    if nr == 0 || nc == 0 {
                        continue;
                    }
                    let off = w.len() as u32;
                    w.extend((r0..r0 + nr).map(|r| gaussian((y - grid.y(r as usize)).powi(2), params.rho)));
                    w.extend((c0..c0 + nc).map(|c| gaussian((x - grid.x(c as usize)).powi(2), params.rho)));
                    segs.push(Segment {
                        decay: (-s / params.lambda).exp(),
                        r0,
                        nr,
                        c0,
                        nc,
                        off,
                    });
                }
                (segs, w)
            })
            .collect();

        let mut pixel_start = Vec::with_capacity(n * n + 1);
        let mut segments = Vec::new();
        let mut weights = Vec::new();
        for (segs, w) in per_pixel {
            pixel_start.push(segments.len() as u32);
            let base = weights.len() as u32;
            segments.extend(segs.into_iter().map(|s| Segment { off: s.off + base, ..s }));
            weights.extend(w);
        }
        pixel_start.push(segments.len() as u32);
        Ok(Self {
            grid,
            window,
            params,
            pixel_start,
            segments,
            weights,
        })
    }

    pub fn grid(&self) -> &ElectrodeGrid {
        &self.grid
    }

    pub fn window(&self) -> &RetinalWindow {
        &self.window
    }

    pub fn params(&self) -> &AxonMapParams {
        &self.params
    }

    pub fn render(&self, stim: &Stimulus) -> Result<Percept> {
        if stim.grid() != &self.grid {
            return Err(Error::input("stimulus grid differs from the renderer's grid"));
        }
        let n = self.window.resolution();
        Percept::new(n, n, self.render_amplitudes(stim.amplitudes()))
    }

    /// Renders raw row-major amplitudes (length checked by the caller).
    pub fn render_amplitudes(&self, amps: &[f32]) -> Vec<f32> {
        assert_eq!(amps.len(), self.grid.len(), "amplitude count");
        let a: Vec<f64> = amps.iter().map(|&v| v as f64).collect();
        let cols = self.grid.cols();
        let n = self.window.resolution();
        let mut out = vec![0.0f32; n * n];
        out.par_iter_mut().enumerate().for_each(|(p, v)| {
            let mut best = 0.0f64;
            for seg in &self.segments[self.pixel_start[p] as usize..self.pixel_start[p + 1] as usize] {
                let (nr, nc) = (seg.nr as usize, seg.nc as usize);
                let gy = &self.weights[seg.off as usize..seg.off as usize + nr];
                let gx = &self.weights[seg.off as usize + nr..seg.off as usize + nr + nc];
                let mut acc = 0.0;
                for (k, &wy) in gy.iter().enumerate() {
                    let start = (seg.r0 as usize + k) * cols + seg.c0 as usize;
                    let row = &a[start..start + nc];
                    let t: f64 = row.iter().zip(gx).map(|(x, y)| x * y).sum();
                    acc += wy * t;
                }
                best = best.max(seg.decay * acc);
            }
            *v = best as f32;
        });
        out
    }
}

/// `I(q) = max_s exp(−d_s/λ) · Σ_j a_j exp(−‖x_s − e_j‖² / 2ρ²)` over the
/// segments `x_s` of the axon through `q`, `d_s` their arc length from `q`.
pub fn render_axon_map(stim: &Stimulus, window: &RetinalWindow, params: &AxonMapParams) -> Result<Percept> {
    AxonMapRenderer::new(*stim.grid(), *window, params.clone())?.render(stim)
}
