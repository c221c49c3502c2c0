//! Parallel-beam, ray-driven forward projection.
//!
//! The gantry rotates about the volume z-axis. For gantry angle `φ` rays run
//! along `(cos φ, sin φ, 0)`; detector columns follow `(−sin φ, cos φ, 0)`
//! and detector rows follow `+z`. Both the volume and the detector are
//! centred on the rotation axis. Each ray is sampled at a fixed step with
//! trilinear interpolation (zero outside the grid); the pixel value is the
//! sample sum times the step. The sample positions depend only on geometry,
//! so the operator is exactly linear in the voxel values.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::exec;

/// Scalar grid, x fastest: voxel `(i, j, k)` is at `i + nx * (j + ny * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        let len = dims.iter().product::<usize>();
        if values.len() != len {
            return Err(Error::Dimension(format!("volume dims {dims:?} need {len} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("volume contains non-finite values".into()));
        }
        Ok(Self { dims, spacing, values })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, vec![0.0; dims.iter().product()])
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// World position (mm) of a voxel centre; the grid centre is the origin.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = [i, j, k];
        std::array::from_fn(|a| (idx[a] as f64 - (self.dims[a] as f64 - 1.0) / 2.0) * self.spacing[a])
    }

    /// Physical extent of the grid in mm.
    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }

    /// Same grid with values replaced by `f(value)`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume { dims: self.dims, spacing: self.spacing, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    /// `α·self + β·other` on the same grid.
    pub fn lin_comb(&self, alpha: f64, other: &Volume, beta: f64) -> Result<Volume> {
        if !self.same_grid(other) {
            return Err(Error::Dimension("volumes on different grids".into()));
        }
        Ok(Volume {
            dims: self.dims,
            spacing: self.spacing,
            values: self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect(),
        })
    }
}

/// Detector image, u (column) fastest: pixel `(a, b)` is at `a + nu * b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionImage {
    dims: [usize; 2],
    spacing: [f64; 2],
    values: Vec<f64>,
}

impl ProjectionImage {
    pub fn new(dims: [usize; 2], spacing: [f64; 2], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("image dims must be positive, got {dims:?}")));
        }
        if values.len() != dims[0] * dims[1] {
            return Err(Error::Dimension(format!("image dims {dims:?} need {} values, got {}", dims[0] * dims[1], values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("image contains non-finite values".into()));
        }
        Ok(Self { dims, spacing, values })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeamType {
    Parallel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub beam: BeamType,
    /// `[nu, nv]` detector columns × rows.
    pub detector: [usize; 2],
    /// Pixel pitch in mm, `[du, dv]`.
    pub pixel_spacing: [f64; 2],
    /// Ray sampling step in mm; `None` means half the smallest voxel spacing.
    pub step: Option<f64>,
}

impl Geometry {
    pub fn parallel(detector: [usize; 2], pixel_spacing: [f64; 2]) -> Self {
        Self { beam: BeamType::Parallel, detector, pixel_spacing, step: None }
    }

    /// Detector pitch chosen so a grid of the given extent (mm) projects
    /// entirely onto `detector` at every gantry angle.
    pub fn fitting(extent: [f64; 3], detector: [usize; 2]) -> Self {
        let diag = extent[0].hypot(extent[1]);
        Self::parallel(detector, [diag / detector[0] as f64, extent[2] / detector[1] as f64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.detector[0] == 0 || self.detector[1] == 0 {
            return Err(Error::Config(format!("detector size must be positive, got {:?}", self.detector)));
        }
        if self.pixel_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("pixel spacing must be positive, got {:?}", self.pixel_spacing)));
        }
        if let Some(step) = self.step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("sampling step must be positive, got {step}")));
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.detector[0] * self.detector[1]
    }

    fn step_for(&self, v: &Volume) -> f64 {
        self.step.unwrap_or_else(|| 0.5 * v.spacing.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    angles: Vec<f64>,
    pub geometry: Geometry,
}

impl Trajectory {
    pub fn new(angles: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Config("trajectory needs at least one angle".into()));
        }
        if angles.iter().any(|&a| !(0.0..TAU).contains(&a)) {
            return Err(Error::Config("trajectory angles must lie in [0, 2π)".into()));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trajectory angles must be strictly increasing".into()));
        }
        geometry.validate()?;
        Ok(Self { angles, geometry })
    }

    /// `count` equally spaced angles over the full circle, starting at 0.
    pub fn circular(count: usize, geometry: Geometry) -> Result<Self> {
        let angles = (0..count).map(|i| i as f64 * TAU / count as f64).collect();
        Self::new(angles, geometry)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Keep only the angles whose index satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Trajectory> {
        let angles = self.angles.iter().enumerate().filter(|&(i, _)| keep(i)).map(|(_, &a)| a).collect();
        Trajectory::new(angles, self.geometry.clone())
    }
}

/// Images of one volume along a trajectory, with the angles they were taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionStack {
    pub angles: Vec<f64>,
    pub images: Vec<ProjectionImage>,
}

impl ProjectionStack {
    pub fn new(angles: Vec<f64>, images: Vec<ProjectionImage>) -> Result<Self> {
        if angles.len() != images.len() {
            return Err(Error::Input(format!("{} angles for {} images", angles.len(), images.len())));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.dims() != first.dims()) {
                return Err(Error::Input("images in a stack must share detector dims".into()));
            }
        }
        Ok(Self { angles, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Line-integral image of `v` at gantry angle `angle` (radians).
pub fn project(v: &Volume, angle: f64, geometry: &Geometry) -> Result<ProjectionImage> {
    geometry.validate()?;
    if !angle.is_finite() {
        return Err(Error::Config(format!("projection angle must be finite, got {angle}")));
    }
    let [nu, nv] = geometry.detector;
    let [du, dv] = geometry.pixel_spacing;
    let step = geometry.step_for(v);
    let [nx, ny, nz] = v.dims;
    let [sx, sy, sz] = v.spacing;
    let (sin, cos) = angle.sin_cos();

    // Fixed sample positions t_k = (k − (n−1)/2)·step spanning the grid's
    // in-plane diagonal.
    let half = 0.5 * (nx as f64 * sx).hypot(ny as f64 * sy) + step;
    let n_samples = (2.0 * half / step).ceil() as usize + 1;
    let t0 = -((n_samples - 1) as f64) / 2.0 * step;

    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let cz = (nz as f64 - 1.0) / 2.0;
    // Continuous voxel coordinate along each ray: g(t) = g0 + t * dg.
    let dgx = cos / sx;
    let dgy = sin / sy;

    let mut out = vec![0.0; nu * nv];
    exec::for_each_chunk_mut(&mut out, nu, |b, row| {
        let zmm = (b as f64 - (nv as f64 - 1.0) / 2.0) * dv;
        let gz = zmm / sz + cz;
        if gz <= -1.0 || gz >= nz as f64 {
            return;
        }
        let kz = gz.floor();
        let fz = gz - kz;
        let kz = kz as isize;
        let zw = [(kz, 1.0 - fz), (kz + 1, fz)];

        for (a, px) in row.iter_mut().enumerate() {
            let umm = (a as f64 - (nu as f64 - 1.0) / 2.0) * du;
            let gx0 = -sin * umm / sx + cx;
            let gy0 = cos * umm / sy + cy;
            let Some((k_lo, k_hi)) = sample_range(gx0, dgx, nx, gy0, dgy, ny, t0, step, n_samples) else {
                continue;
            };
            let mut acc = 0.0;
            for k in k_lo..=k_hi {
                let t = t0 + k as f64 * step;
                let gx = gx0 + t * dgx;
                let gy = gy0 + t * dgy;
                let ix = gx.floor();
                let iy = gy.floor();
                let fx = gx - ix;
                let fy = gy - iy;
                let ix = ix as isize;
                let iy = iy as isize;
                let xw = [(ix, 1.0 - fx), (ix + 1, fx)];
                let yw = [(iy, 1.0 - fy), (iy + 1, fy)];
                for &(zk, wz) in &zw {
                    if zk < 0 || zk >= nz as isize {
                        continue;
                    }
                    for &(yj, wy) in &yw {
                        if yj < 0 || yj >= ny as isize {
                            continue;
                        }
                        let base = nx * (yj as usize + ny * zk as usize);
                        for &(xi, wx) in &xw {
                            if xi < 0 || xi >= nx as isize {
                                continue;
                            }
                            acc += wz * wy * wx * v.values[base + xi as usize];
                        }
                    }
                }
            }
            *px = acc * step;
        }
    });
    ProjectionImage::new(geometry.detector, geometry.pixel_spacing, out)
}

/// Sample indices whose trilinear footprint can touch the grid in x and y.
#[allow(clippy::too_many_arguments)]
fn sample_range(
    gx0: f64,
    dgx: f64,
    nx: usize,
    gy0: f64,
    dgy: f64,
    ny: usize,
    t0: f64,
    step: f64,
    n: usize,
) -> Option<(usize, usize)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (g0, dg, len) in [(gx0, dgx, nx), (gy0, dgy, ny)] {
        // Need -1 < g0 + t*dg < len.
        if dg.abs() < 1e-300 {
            if g0 <= -1.0 || g0 >= len as f64 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - g0) / dg;
        let b = (len as f64 - g0) / dg;
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if hi <= lo {
        return None;
    }
    let k_lo = ((lo - t0) / step).floor().max(0.0) as usize;
    let k_hi = (((hi - t0) / step).ceil().max(0.0) as usize).min(n - 1);
    (k_lo <= k_hi).then_some((k_lo, k_hi))
}

/// One image per trajectory angle, in trajectory order.
pub fn project_stack(v: &Volume, traj: &Trajectory) -> Result<ProjectionStack> {
    let images =
        exec::map_range(traj.len(), |i| project(v, traj.angles[i], &traj.geometry)).into_iter().collect::<Result<Vec<_>>>()?;
    ProjectionStack::new(traj.angles.clone(), images)
}
