use crate::error::{Error, Result};

/// Rectangular electrode array. Positions are in micrometers, in a retinal
/// frame where the fovea is the origin and +x points toward the optic disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectrodeGrid {
    rows: usize,
    cols: usize,
    pitch: f64,
    center: (f64, f64),
}

impl ElectrodeGrid {
    pub fn new(rows: usize, cols: usize, pitch: f64, center: (f64, f64)) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::input(format!("electrode grid {rows}×{cols} is empty")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::input(format!("electrode pitch must be positive, got {pitch}")));
        }
        Ok(Self {
            rows,
            cols,
            pitch,
            center,
        })
    }

    /// 6×10 array at 525 µm pitch (Argus II layout).
    pub fn argus_ii() -> Self {
        Self::new(6, 10, 525.0, (0.0, 0.0)).expect("valid constants")
    }

    /// 28×28 array spanning the same width as [`ElectrodeGrid::argus_ii`].
    pub fn dense_28() -> Self {
        Self::new(28, 28, 9.0 * 525.0 / 27.0, (0.0, 0.0)).expect("valid constants")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, col: usize) -> f64 {
        self.center.0 + (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn y(&self, row: usize) -> f64 {
        self.center.1 + (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn position(&self, row: usize, col: usize) -> (f64, f64) {
        (self.x(col), self.y(row))
    }

    /// Distance from the grid center to the outermost electrode column or row.
    pub fn half_width(&self) -> f64 {
        let span = (self.rows.max(self.cols) as f64 - 1.0) / 2.0;
        span * self.pitch
    }
}

/// Row-major electrode amplitudes in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    grid: ElectrodeGrid,
    amplitudes: Vec<f32>,
}

impl Stimulus {
    pub fn new(grid: ElectrodeGrid, amplitudes: Vec<f32>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} amplitudes for a {}×{} grid",
                amplitudes.len(),
                grid.rows,
                grid.cols
            )));
        }
        if let Some(a) = amplitudes.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::input(format!("amplitude {a} outside [0, 1]")));
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn zeros(grid: ElectrodeGrid) -> Self {
        Self {
            grid,
            amplitudes: vec![0.0; grid.len()],
        }
    }

    /// A single electrode driven at `amplitude`.
    pub fn single(grid: ElectrodeGrid, row: usize, col: usize, amplitude: f32) -> Result<Self> {
        if row >= grid.rows || col >= grid.cols {
            return Err(Error::input(format!("electrode ({row}, {col}) outside the grid")));
        }
        let mut amps = vec![0.0; grid.len()];
        amps[row * grid.cols + col] = amplitude;
        Self::new(grid, amps)
    }

    pub fn grid(&self) -> &ElectrodeGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[f32] {
        &self.amplitudes
    }

    pub fn amplitude(&self, row: usize, col: usize) -> f32 {
        self.amplitudes[row * self.grid.cols + col]
    }
}

/// Square sampling window centered on the electrode grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetinalWindow {
    half_extent: f64,
    resolution: usize,
    center: (f64, f64),
}

impl RetinalWindow {
    pub fn new(half_extent: f64, resolution: usize, center: (f64, f64)) -> Result<Self> {
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(Error::input(format!("window half-extent must be positive, got {half_extent}")));
        }
        if resolution < 8 {
            return Err(Error::input(format!("window resolution {resolution} is below 8")));
        }
        Ok(Self {
            half_extent,
            resolution,
            center,
        })
    }

    /// Grid half-width plus a `2ρ` margin, sampled at `resolution` pixels.
    pub fn around(grid: &ElectrodeGrid, rho: f64, resolution: usize) -> Result<Self> {
        Self::new(grid.half_width() + 2.0 * rho, resolution, grid.center())
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent / self.resolution as f64
    }

    /// Retinal coordinate of pixel center `i` along one axis.
    pub fn coord(&self, i: usize, axis_center: f64) -> f64 {
        axis_center - self.half_extent + (i as f64 + 0.5) * self.pixel_size()
    }

    /// Retinal position of pixel `(row, col)`; rows run along +y.
    pub fn pixel(&self, row: usize, col: usize) -> (f64, f64) {
        (self.coord(col, self.center.0), self.coord(row, self.center.1))
    }
}

/// Nonnegative brightness map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Percept {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Percept {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}×{width} percept",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numeric(format!("percept value {v} is negative or not finite")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().cloned().fold(0.0, f32::max)
    }

    /// Row and column of the brightest pixel (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub(crate) fn divide(&mut self, by: f32) {
        self.data.iter_mut().for_each(|v| *v /= by);
    }
}
