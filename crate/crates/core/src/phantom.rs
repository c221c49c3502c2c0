//! Synthetic 4D breathing phantom.
//!
//! A thorax made of a body ellipsoid, two lung ellipsoids, an abdomen below
//! a paraboloid diaphragm dome and a spherical tumour. The dome apex and the
//! tumour move inferiorly by `A·sin²(π t)`; optionally the body expands
//! anteriorly–posteriorly with its own, phase-lagged law.
//!
//! Voxelisation is anti-aliased: each voxel column is split into
//! `supersample × supersample` sub-rays in x/y, and along z the coverage of
//! every structure is computed exactly from its entry/exit heights. Along z
//! the coverage can be weighted by a triangular slice profile wider than a
//! voxel, which keeps voxel values close to linear in the SI displacement.
//! Where structures overlap, the last one in the order body → lungs →
//! abdomen → tumour wins.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec;
use crate::projector::Volume;

pub const HU_MIN: f64 = -1000.0;
pub const HU_MAX: f64 = 3000.0;

/// Linear attenuation of water in 1/mm (≈ 70 keV).
pub const MU_WATER: f64 = 0.0195;

/// HU → linear attenuation (1/mm); air maps to 0.
pub fn hu_to_attenuation(hu: f64) -> f64 {
    MU_WATER * (hu + 1000.0) / 1000.0
}

/// Fraction of the breathing cycle, `0 ≤ t < 1`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Phase(f64);

impl Phase {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t) {
            return Err(Error::Config(format!("phase must lie in [0, 1), got {t}")));
        }
        Ok(Self(t))
    }

    #[inline]
    pub fn t(self) -> f64 {
        self.0
    }

    /// `sin²(π (t − lag))`, the normalised displacement.
    pub fn sin2(self, lag: f64) -> f64 {
        (PI * (self.0 - lag)).sin().powi(2)
    }

    /// Circular distance on the unit cycle.
    pub fn distance(self, other: Phase) -> f64 {
        let d = (self.0 - other.0).abs();
        d.min(1.0 - d)
    }

    /// Amplitude label in the style "15% In" / "85% Ex" for the pure sin² law.
    pub fn label(self) -> String {
        let pct = (self.sin2(0.0) * 100.0).round() as i64;
        // Nearest of the customary bins.
        let bin = [0, 15, 50, 85, 100].into_iter().min_by_key(|b| (b - pct).abs()).unwrap();
        let dir = if self.0 <= 0.5 { "In" } else { "Ex" };
        format!("{bin}% {dir}")
    }
}

/// The eight customary phase bins at `t = j/8`.
pub fn default_phases() -> Vec<Phase> {
    (0..8).map(|j| Phase(j as f64 / 8.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub hu: f64,
}

impl Ellipsoid {
    /// `dy` stretches the anterior (`+y`) half only.
    fn z_interval(&self, x: f64, y: f64, dy: f64) -> Option<(f64, f64)> {
        let b = if y > self.center[1] { self.semi_axes[1] + dy } else { self.semi_axes[1] };
        let q = 1.0 - ((x - self.center[0]) / self.semi_axes[0]).powi(2) - ((y - self.center[1]) / b).powi(2);
        (q > 0.0).then(|| {
            let h = self.semi_axes[2] * q.sqrt();
            (self.center[2] - h, self.center[2] + h)
        })
    }

    fn bounds(&self, dy: f64, dz: f64) -> [(f64, f64); 3] {
        let s = self.semi_axes;
        let c = [self.center[0], self.center[1], self.center[2] + dz];
        let mut b: [(f64, f64); 3] = std::array::from_fn(|a| (c[a] - s[a], c[a] + s[a]));
        b[1].1 += dy;
        b
    }
}

/// Abdomen: everything inside the body below `z = apex − curvature·r²`,
/// with `r` measured from the body axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Diaphragm {
    pub apex_z: f64,
    pub curvature: f64,
    pub hu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub hu: f64,
}

/// Anterior chest-wall expansion (the posterior half stays fixed), amplitude `fraction · A_d`, following
/// `sin²(π (t − lag))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChestWall {
    pub fraction: f64,
    pub lag: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub background_hu: f64,
    pub body: Ellipsoid,
    pub lungs: [Ellipsoid; 2],
    pub diaphragm: Diaphragm,
    pub tumor: Sphere,
    /// Diaphragm amplitude `A_d` (mm).
    pub amplitude_diaphragm: f64,
    /// Tumour amplitude `A_t` (mm).
    pub amplitude_tumor: f64,
    pub chest_wall: Option<ChestWall>,
    pub supersample: usize,
    /// Half-width (mm) of the triangular slice profile along z; 0 averages
    /// over the voxel thickness only.
    pub slice_profile: f64,
    pub phases: Vec<Phase>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [4.0; 3],
            background_hu: -1000.0,
            body: Ellipsoid { center: [0.0, 0.0, 0.0], semi_axes: [115.0, 80.0, 120.0], hu: 0.0 },
            lungs: [
                Ellipsoid { center: [-55.0, 0.0, 20.0], semi_axes: [40.0, 55.0, 60.0], hu: -750.0 },
                Ellipsoid { center: [55.0, 0.0, 20.0], semi_axes: [40.0, 55.0, 60.0], hu: -750.0 },
            ],
            diaphragm: Diaphragm { apex_z: -10.0, curvature: 0.004, hu: 50.0 },
            tumor: Sphere { center: [50.0, 10.0, 20.0], radius: 12.0, hu: 40.0 },
            amplitude_diaphragm: 6.0,
            amplitude_tumor: 5.0,
            chest_wall: Some(ChestWall { fraction: 0.2, lag: 0.125 }),
            supersample: 2,
            slice_profile: 6.0,
            phases: default_phases(),
        }
    }
}

/// Per-phase displacements (mm): diaphragm/tumour inferior shift and chest
/// wall AP expansion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Displacement {
    pub diaphragm: f64,
    pub tumor: f64,
    pub chest_wall: f64,
}

impl PhantomSpec {
    pub fn displacement(&self, t: Phase) -> Displacement {
        let s = t.sin2(0.0);
        Displacement {
            diaphragm: self.amplitude_diaphragm * s,
            tumor: self.amplitude_tumor * s,
            chest_wall: self.chest_wall.as_ref().map_or(0.0, |c| c.fraction * self.amplitude_diaphragm * t.sin2(c.lag)),
        }
    }

    /// Independent temporal motion patterns built into the phantom.
    pub fn motion_mode_count(&self) -> usize {
        let si = usize::from(self.amplitude_diaphragm > 0.0 || self.amplitude_tumor > 0.0);
        let ap = usize::from(self.chest_wall.as_ref().is_some_and(|c| c.fraction > 0.0 && self.amplitude_diaphragm > 0.0));
        si + ap
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("grid dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("grid spacing must be positive, got {:?}", self.spacing)));
        }
        if !(self.slice_profile >= 0.0 && self.slice_profile.is_finite()) {
            return Err(Error::Config(format!("slice profile must be ≥ 0, got {}", self.slice_profile)));
        }
        if self.supersample == 0 {
            return Err(Error::Config("supersample must be at least 1".into()));
        }
        if !(self.amplitude_diaphragm >= 0.0 && self.amplitude_tumor >= 0.0) {
            return Err(Error::Config("motion amplitudes must be non-negative".into()));
        }
        if let Some(c) = &self.chest_wall {
            if !(c.fraction >= 0.0 && c.lag.is_finite()) {
                return Err(Error::Config("chest wall fraction must be non-negative".into()));
            }
        }
        let hus = [self.background_hu, self.body.hu, self.lungs[0].hu, self.lungs[1].hu, self.diaphragm.hu, self.tumor.hu];
        if hus.iter().any(|h| !(HU_MIN..=HU_MAX).contains(h)) {
            return Err(Error::Config(format!("HU values must lie in [{HU_MIN}, {HU_MAX}]")));
        }
        if self.phases.is_empty() {
            return Err(Error::Config("phantom needs at least one phase".into()));
        }
        for &p in &self.phases {
            Phase::new(p.t())?;
            self.check_inside(p)?;
        }
        Ok(())
    }

    fn check_inside(&self, t: Phase) -> Result<()> {
        let d = self.displacement(t);
        let half: [f64; 3] = std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a] / 2.0);
        let r = self.tumor.radius;
        let c = self.tumor.center;
        let tumor = [(c[0] - r, c[0] + r), (c[1] - r, c[1] + r), (c[2] - d.tumor - r, c[2] - d.tumor + r)];
        let boxes = [
            ("body", self.body.bounds(d.chest_wall, 0.0)),
            ("lung", self.lungs[0].bounds(0.0, 0.0)),
            ("lung", self.lungs[1].bounds(0.0, 0.0)),
            ("tumor", tumor),
        ];
        for (name, b) in boxes {
            for a in 0..3 {
                if b[a].0 < -half[a] || b[a].1 > half[a] {
                    return Err(Error::Config(format!("{name} leaves the grid along axis {a} at phase t={}", t.t())));
                }
            }
        }
        Ok(())
    }

    /// Piecewise-constant HU profile along the vertical line through `(x, y)`:
    /// sorted `(z_start, hu)` segments, background before the first.
    fn column_profile(&self, x: f64, y: f64, d: &Displacement) -> Vec<(f64, f64)> {
        let mut intervals: Vec<((f64, f64), f64)> = Vec::with_capacity(5);
        let body = self.body.z_interval(x, y, d.chest_wall);
        if let Some(iv) = body {
            intervals.push((iv, self.body.hu));
        }
        for lung in &self.lungs {
            if let Some(iv) = lung.z_interval(x, y, 0.0) {
                intervals.push((iv, lung.hu));
            }
        }
        if let Some((lo, hi)) = body {
            let r2 = (x - self.body.center[0]).powi(2) + (y - self.body.center[1]).powi(2);
            let top = (self.diaphragm.apex_z - d.diaphragm - self.diaphragm.curvature * r2).min(hi);
            if top > lo {
                intervals.push(((lo, top), self.diaphragm.hu));
            }
        }
        let c = self.tumor.center;
        let q = self.tumor.radius.powi(2) - (x - c[0]).powi(2) - (y - c[1]).powi(2);
        if q > 0.0 {
            let zc = c[2] - d.tumor;
            intervals.push(((zc - q.sqrt(), zc + q.sqrt()), self.tumor.hu));
        }

        let mut cuts: Vec<f64> = intervals.iter().flat_map(|((a, b), _)| [*a, *b]).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut segs = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let hu = intervals.iter().rev().find(|((a, b), _)| *a <= mid && mid <= *b).map_or(self.background_hu, |(_, h)| *h);
            segs.push((w[0], hu));
        }
        if let Some(&last) = cuts.last() {
            segs.push((last, self.background_hu));
        }
        segs
    }
}

/// Mean of a piecewise-constant profile over `[z0, z1]`.
fn average_over(segs: &[(f64, f64)], background: f64, z0: f64, z1: f64) -> f64 {
    let c = (z0 + z1) / 2.0;
    let h = (z1 - z0) / 2.0;
    weighted_average(segs, background, |z| ((z - c) / (2.0 * h) + 0.5).clamp(0.0, 1.0))
}

/// CDF of the triangular kernel of half-width `w` centred on `c`.
fn triangle_cdf(z: f64, c: f64, w: f64) -> f64 {
    let u = (z - c) / w;
    if u <= -1.0 {
        0.0
    } else if u <= 0.0 {
        0.5 * (1.0 + u).powi(2)
    } else if u < 1.0 {
        1.0 - 0.5 * (1.0 - u).powi(2)
    } else {
        1.0
    }
}

/// `∫ profile · dK` for a kernel given by its CDF.
fn weighted_average(segs: &[(f64, f64)], background: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut prev_cdf = 0.0;
    let mut current = background;
    for &(start, hu) in segs {
        let c = cdf(start);
        acc += current * (c - prev_cdf);
        prev_cdf = c;
        current = hu;
    }
    acc + current * (1.0 - prev_cdf)
}

/// HU volume of the phantom at phase `t`.
pub fn generate(spec: &PhantomSpec, t: Phase) -> Result<Volume> {
    spec.validate()?;
    spec.check_inside(t)?;
    let d = spec.displacement(t);
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, sz] = spec.spacing;
    let ss = spec.supersample;
    let grid = Volume::zeros(spec.dims, spec.spacing)?;

    let columns: Vec<Vec<f64>> = exec::map_range(nx * ny, |col| {
        let (i, j) = (col % nx, col / nx);
        let [xc, yc, _] = grid.voxel_center(i, j, 0);
        let mut acc = vec![0.0; nz];
        for a in 0..ss {
            for b in 0..ss {
                let x = xc + ((a as f64 + 0.5) / ss as f64 - 0.5) * sx;
                let y = yc + ((b as f64 + 0.5) / ss as f64 - 0.5) * sy;
                let segs = spec.column_profile(x, y, &d);
                for (k, out) in acc.iter_mut().enumerate() {
                    let zc = grid.voxel_center(0, 0, k)[2];
                    *out += if spec.slice_profile > 0.0 {
                        weighted_average(&segs, spec.background_hu, |z| triangle_cdf(z, zc, spec.slice_profile))
                    } else {
                        average_over(&segs, spec.background_hu, zc - sz / 2.0, zc + sz / 2.0)
                    };
                }
            }
        }
        let n = (ss * ss) as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        acc
    });

    let mut values = vec![0.0; nx * ny * nz];
    for (col, column) in columns.iter().enumerate() {
        for (k, &v) in column.iter().enumerate() {
            values[col + nx * ny * k] = v;
        }
    }
    Volume::new(spec.dims, spec.spacing, values)
}

/// One volume per configured phase, in order.
pub fn generate_4d(spec: &PhantomSpec) -> Result<Vec<(Phase, Volume)>> {
    spec.validate()?;
    spec.phases.iter().map(|&p| generate(spec, p).map(|v| (p, v))).collect()
}
