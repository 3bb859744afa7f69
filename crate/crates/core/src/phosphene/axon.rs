use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Constants of the Jansonius nerve-fiber bundle model and the sampling
/// used to grow bundles from it. Angles in degrees, distances in degrees of
/// visual angle unless noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JansoniusParams {
    /// Optic-disc center in micrometers.
    pub optic_disc: (f64, f64),
    pub um_per_deg: f64,
    pub beta_sup: f64,
    pub beta_inf: f64,
    pub n_bundles: usize,
    pub phi0_range: (f64, f64),
    /// Radial samples per bundle.
    pub n_rho: usize,
    pub rho_range: (f64, f64),
}

impl Default for JansoniusParams {
    fn default() -> Self {
        Self {
            optic_disc: (4340.0, 420.0),
            um_per_deg: 280.0,
            beta_sup: -1.9,
            beta_inf: 0.5,
            n_bundles: 1000,
            phi0_range: (-180.0, 180.0),
            n_rho: 500,
            rho_range: (0.0, 50.0),
        }
    }
}

impl JansoniusParams {
    pub fn validate(&self) -> Result<()> {
        let (odx, _) = self.optic_disc;
        if odx == 0.0 || !odx.is_finite() {
            return Err(Error::input("optic disc must have a nonzero x coordinate"));
        }
        if !(self.um_per_deg > 0.0) {
            return Err(Error::input("um_per_deg must be positive"));
        }
        if self.n_bundles < 2 || self.n_rho < 2 {
            return Err(Error::input("need at least two bundles and two radial samples"));
        }
        let (r0, r1) = self.rho_range;
        if !(0.0 <= r0 && r0 < r1) {
            return Err(Error::input(format!("invalid radial range ({r0}, {r1})")));
        }
        let (p0, p1) = self.phi0_range;
        if !(-180.0 <= p0 && p0 < p1 && p1 <= 180.0) {
            return Err(Error::input(format!("invalid phi0 range ({p0}, {p1})")));
        }
        Ok(())
    }

    /// One bundle starting at angle `phi0`, ordered from the optic disc
    /// outward, in micrometers. Truncated where it first crosses the
    /// horizontal meridian.
    pub fn bundle(&self, phi0: f64) -> Vec<(f64, f64)> {
        let od = (self.optic_disc.0 / self.um_per_deg, self.optic_disc.1 / self.um_per_deg);
        let superior = phi0 > 0.0;
        let (b, c) = if superior {
            let t = ((phi0 - 121.0) / 14.0).tanh();
            ((self.beta_sup - 3.9 * t).exp(), 1.9 + 1.4 * t)
        } else {
            let t = ((-phi0 - 90.0) / 25.0).tanh();
            (-(self.beta_inf - 1.5 * t).exp(), 1.0 + 0.5 * t)
        };
        let (r0, r1) = self.rho_range;
        let step = (r1 - r0) / (self.n_rho - 1) as f64;
        let mut out = Vec::with_capacity(self.n_rho);
        for k in 0..self.n_rho {
            let rho = r0 + k as f64 * step;
            let phi = (phi0 + b * (rho - r0).powf(c)).to_radians();
            let (xp, yp) = (rho * phi.cos(), rho * phi.sin());
            if (superior && yp < 0.0) || (!superior && yp > 0.0) {
                break;
            }
            let x = xp + od.0;
            let bends = if od.0 > 0.0 { xp > -od.0 } else { xp < -od.0 };
            let y = if bends { yp + od.1 * (x / od.0).powi(2) } else { yp };
            out.push((x * self.um_per_deg, y * self.um_per_deg));
        }
        out
    }
}

/// Grown bundles with a uniform-grid index for nearest-point queries.
pub struct AxonBundles {
    params: JansoniusParams,
    bundles: Vec<Vec<(f64, f64)>>,
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<(u32, u32)>>,
}

impl fmt::Debug for AxonBundles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AxonBundles")
            .field("params", &self.params)
            .field("bundles", &self.bundles.len())
            .finish()
    }
}

/// Bundles with this many points or fewer are discarded.
const MIN_BUNDLE_POINTS: usize = 10;
const INDEX_CELL_UM: f64 = 100.0;

impl AxonBundles {
    pub fn grow(params: JansoniusParams) -> Result<Self> {
        params.validate()?;
        let (p0, p1) = params.phi0_range;
        let step = (p1 - p0) / (params.n_bundles - 1) as f64;
        let bundles: Vec<Vec<(f64, f64)>> = (0..params.n_bundles)
            .map(|i| params.bundle(p0 + i as f64 * step))
            .filter(|b| b.len() > MIN_BUNDLE_POINTS)
            .collect();
        if bundles.is_empty() {
            return Err(Error::input("no axon bundle survived growth"));
        }
        let pts = bundles.iter().flatten();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let cell = INDEX_CELL_UM;
        let nx = ((x1 - x0) / cell).floor() as usize + 1;
        let ny = ((y1 - y0) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (bi, b) in bundles.iter().enumerate() {
            for (pi, &(x, y)) in b.iter().enumerate() {
                let cx = ((x - x0) / cell) as usize;
                let cy = ((y - y0) / cell) as usize;
                cells[cy * nx + cx].push((bi as u32, pi as u32));
            }
        }
        Ok(Self {
            params,
            bundles,
            origin: (x0, y0),
            cell,
            nx,
            ny,
            cells,
        })
    }

    pub fn params(&self) -> &JansoniusParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn bundle(&self, i: usize) -> &[(f64, f64)] {
        &self.bundles[i]
    }

    /// `(bundle, point)` indices of the bundle point closest to `q`.
    pub fn closest(&self, q: (f64, f64)) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let cx = clamp((q.0 - self.origin.0) / self.cell, self.nx) as isize;
        let cy = clamp((q.1 - self.origin.1) / self.cell, self.ny) as isize;
        let mut best = (f64::MAX, 0u32, 0u32);
        let max_ring = self.nx.max(self.ny) as isize;
        for ring in 0..=max_ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= self.nx as isize || y >= self.ny as isize {
                        continue;
                    }
                    for &(bi, pi) in &self.cells[y as usize * self.nx + x as usize] {
                        let (px, py) = self.bundles[bi as usize][pi as usize];
                        let d = (px - q.0).powi(2) + (py - q.1).powi(2);
                        if d < best.0 || (d == best.0 && (bi, pi) < (best.1, best.2)) {
                            best = (d, bi, pi);
                        }
                    }
                }
            }
            let reach = ring as f64 * self.cell;
            if best.0 < f64::MAX && best.0 <= reach * reach {
                break;
            }
        }
        (best.1 as usize, best.2 as usize)
    }
}

/// How axon trajectories are generated for each retinal location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    StraightToDisc,
    Spiral,
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::StraightToDisc => "straight-to-disc",
            TrajectoryKind::Spiral => "spiral",
        }
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight-to-disc" => Ok(TrajectoryKind::StraightToDisc),
            "spiral" => Ok(TrajectoryKind::Spiral),
            other => Err(Error::Config(format!(
                "unknown trajectory '{other}' (expected straight-to-disc or spiral)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Trajectory {
    StraightToDisc { disc: (f64, f64) },
    Spiral(Arc<AxonBundles>),
}

impl Trajectory {
    pub fn straight(disc: (f64, f64)) -> Self {
        Trajectory::StraightToDisc { disc }
    }

    pub fn spiral(params: JansoniusParams) -> Result<Self> {
        Ok(Trajectory::Spiral(Arc::new(AxonBundles::grow(params)?)))
    }

    pub fn build(kind: TrajectoryKind, params: JansoniusParams) -> Result<Self> {
        match kind {
            TrajectoryKind::StraightToDisc => Ok(Self::straight(params.optic_disc)),
            TrajectoryKind::Spiral => Self::spiral(params),
        }
    }

    pub fn kind(&self) -> TrajectoryKind {
        match self {
            Trajectory::StraightToDisc { .. } => TrajectoryKind::StraightToDisc,
            Trajectory::Spiral(_) => TrajectoryKind::Spiral,
        }
    }
}

/// Polyline from a retinal point toward the optic disc.
#[derive(Debug, Clone, PartialEq)]
pub struct AxonPath {
    points: Vec<(f64, f64)>,
    arc: Vec<f64>,
}

impl AxonPath {
    fn from_points(points: Vec<(f64, f64)>) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let q = points[i - 1];
                total += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            }
            arc.push(total);
        }
        Self { points, arc }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Cumulative arc length from the start at each point.
    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("path has at least one point")
    }

    /// Position at arc length `s`, clamped to the path.
    pub fn at(&self, s: f64) -> (f64, f64) {
        if s <= 0.0 || self.points.len() == 1 {
            return self.points[0];
        }
        let k = self.arc.partition_point(|&a| a < s);
        if k >= self.points.len() {
            return *self.points.last().expect("nonempty");
        }
        let (a0, a1) = (self.arc[k - 1], self.arc[k]);
        let t = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
        let (p, q) = (self.points[k - 1], self.points[k]);
        (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
    }

    /// `n` points uniformly spaced in arc length over the first
    /// `min(max_arc, length)` of the path, with their arc lengths.
    pub fn sample(&self, n: usize, max_arc: f64) -> Vec<((f64, f64), f64)> {
        let span = max_arc.min(self.length());
        if n < 2 || span <= 0.0 {
            return vec![(self.points[0], 0.0)];
        }
        (0..n)
            .map(|k| {
                let s = span * k as f64 / (n - 1) as f64;
                (self.at(s), s)
            })
            .collect()
    }
}

/// Axon trajectory through `q`, ordered from `q` toward the optic disc.
pub fn axon_path(q: (f64, f64), trajectory: &Trajectory) -> AxonPath {
    match trajectory {
        Trajectory::StraightToDisc { disc } => {
            if q == *disc {
                AxonPath::from_points(vec![q])
            } else {
                AxonPath::from_points(vec![q, *disc])
            }
        }
        Trajectory::Spiral(bundles) => {
            let (bi, pi) = bundles.closest(q);
            let b = bundles.bundle(bi);
            let mut points = Vec::with_capacity(pi + 2);
            points.push(q);
            points.extend(b[..=pi].iter().rev());
            AxonPath::from_points(points)
        }
    }
}
