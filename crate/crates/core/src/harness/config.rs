//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `out` | `.` | output directory (must exist) |
//! | `seed` | 42 | recorded in every manifest |
//! | `grid` | 64 | voxels per axis; spacing scales to keep a 256 mm field |
//! | `detector_nu`, `detector_nv` | 64, 64 | detector size |
//! | `angles` | 60 | projections on the full circle |
//! | `phases` | 8 | respiratory phases at `t = j/F` |
//! | `f`, `g` | 6, 10 | bilinear ranks |
//! | `modes_e` | 5 | shape-model modes for the regression |
//! | `ridge` | 0 | regression ridge parameter |
//! | `holdout_stride`, `holdout_offset` | 6, 3 | held-out angles are `i ≡ offset (mod stride)` |
//! | `holdout_phase` | `all` | a phase index, or `all` for the leave-one-out loop |
//! | `spline_degree` | 3 | rotational spline degree |
//! | `spline_closure` | `auto` | `auto`, `clamped` or `periodic` |
//! | `amplitude_diaphragm`, `amplitude_tumor` | 15, 10 | motion amplitudes (mm) |
//! | `chest_wall` | 0.2 | AP expansion as a fraction of the diaphragm amplitude; 0 disables |
//! | `chest_wall_lag` | 0.25 | phase lag of the AP expansion |
//! | `supersample` | 2 | in-plane sub-rays per voxel edge |
//! | `tumor_radius` | 12 | tumour radius (mm) |
//! | `slice_profile` | 0 | half-width (mm) of the triangular z profile; 0 = voxel thickness |

use std::path::{Path, PathBuf};

use crate::bilinear::{SplineClosure, TrainOptions};
use crate::error::{Error, Result};
use crate::phantom::{ChestWall, PhantomSpec, Phase, Sphere};
use crate::projector::Geometry;

/// Physical field of view kept fixed when the grid is rescaled.
pub const FIELD_MM: f64 = 256.0;

#[derive(Clone, Debug, PartialEq)]
pub enum HoldoutPhase {
    All,
    Index(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub grid: usize,
    pub detector: [usize; 2],
    pub angles: usize,
    pub phases: usize,
    pub f: usize,
    pub g: usize,
    pub modes_e: usize,
    pub ridge: f64,
    pub holdout_stride: usize,
    pub holdout_offset: usize,
    pub holdout_phase: HoldoutPhase,
    pub spline_degree: usize,
    pub spline_closure: SplineClosure,
    pub amplitude_diaphragm: f64,
    pub amplitude_tumor: f64,
    pub chest_wall: f64,
    pub chest_wall_lag: f64,
    pub supersample: usize,
    pub slice_profile: f64,
    pub tumor_radius: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = PhantomSpec::default();
        Self {
            out: PathBuf::from("."),
            seed: 42,
            grid: 64,
            detector: [64, 64],
            angles: 60,
            phases: 8,
            f: 6,
            g: 10,
            modes_e: 5,
            ridge: 0.0,
            holdout_stride: 6,
            holdout_offset: 3,
            holdout_phase: HoldoutPhase::All,
            spline_degree: 3,
            spline_closure: SplineClosure::Auto,
            amplitude_diaphragm: spec.amplitude_diaphragm,
            amplitude_tumor: spec.amplitude_tumor,
            chest_wall: spec.chest_wall.as_ref().map_or(0.0, |c| c.fraction),
            chest_wall_lag: spec.chest_wall.as_ref().map_or(0.25, |c| c.lag),
            supersample: spec.supersample,
            slice_profile: spec.slice_profile,
            tumor_radius: spec.tumor.radius,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

impl ExperimentConfig {
    /// Parse a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "grid" => self.grid = num(key, value)?,
            "detector_nu" => self.detector[0] = num(key, value)?,
            "detector_nv" => self.detector[1] = num(key, value)?,
            "angles" => self.angles = num(key, value)?,
            "phases" => self.phases = num(key, value)?,
            "f" => self.f = num(key, value)?,
            "g" => self.g = num(key, value)?,
            "modes_e" => self.modes_e = num(key, value)?,
            "ridge" => self.ridge = num(key, value)?,
            "holdout_stride" => self.holdout_stride = num(key, value)?,
            "holdout_offset" => self.holdout_offset = num(key, value)?,
            "holdout_phase" => {
                self.holdout_phase = if value == "all" { HoldoutPhase::All } else { HoldoutPhase::Index(num(key, value)?) }
            }
            "spline_degree" => self.spline_degree = num(key, value)?,
            "spline_closure" => {
                self.spline_closure = match value {
                    "auto" => SplineClosure::Auto,
                    "clamped" => SplineClosure::Clamped,
                    "periodic" => SplineClosure::Periodic,
                    _ => return Err(Error::Config(format!("spline_closure must be auto, clamped or periodic, got {value:?}"))),
                }
            }
            "amplitude_diaphragm" => self.amplitude_diaphragm = num(key, value)?,
            "amplitude_tumor" => self.amplitude_tumor = num(key, value)?,
            "chest_wall" => self.chest_wall = num(key, value)?,
            "chest_wall_lag" => self.chest_wall_lag = num(key, value)?,
            "supersample" => self.supersample = num(key, value)?,
            "slice_profile" => self.slice_profile = num(key, value)?,
            "tumor_radius" => self.tumor_radius = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid < 8 {
            return bad(format!("grid must be at least 8, got {}", self.grid));
        }
        if self.detector.contains(&0) {
            return bad("detector dimensions must be positive".into());
        }
        if self.angles == 0 || self.phases == 0 {
            return bad("need at least one angle and one phase".into());
        }
        if self.holdout_stride == 0 || self.holdout_offset >= self.holdout_stride {
            return bad(format!("holdout offset {} must be below the stride {}", self.holdout_offset, self.holdout_stride));
        }
        if let HoldoutPhase::Index(j) = self.holdout_phase {
            if j >= self.phases {
                return bad(format!("holdout phase {j} out of range for {} phases", self.phases));
            }
        }
        if self.f == 0 || self.g == 0 || self.modes_e == 0 {
            return bad("ranks f, g and modes_e must be positive".into());
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be ≥ 0, got {}", self.ridge));
        }
        if self.spline_degree == 0 {
            return bad("spline degree must be positive".into());
        }
        if !(0.0..1.0).contains(&self.chest_wall) {
            return bad(format!("chest_wall fraction must lie in [0, 1), got {}", self.chest_wall));
        }
        if self.supersample == 0 {
            return bad("supersample must be positive".into());
        }
        Ok(())
    }

    /// Error out (naming the path) when the output directory is missing.
    pub fn check_out_dir(&self) -> Result<()> {
        if self.out.is_dir() {
            Ok(())
        } else {
            Err(Error::io(&self.out, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")))
        }
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let phases = (0..self.phases).map(|j| Phase::new(j as f64 / self.phases as f64)).collect::<Result<Vec<_>>>()?;
        let h = FIELD_MM / self.grid as f64;
        let spec = PhantomSpec {
            dims: [self.grid; 3],
            spacing: [h; 3],
            amplitude_diaphragm: self.amplitude_diaphragm,
            amplitude_tumor: self.amplitude_tumor,
            chest_wall: (self.chest_wall > 0.0).then_some(ChestWall { fraction: self.chest_wall, lag: self.chest_wall_lag }),
            supersample: self.supersample,
            slice_profile: self.slice_profile,
            phases,
            ..PhantomSpec::default()
        };
        let spec = PhantomSpec { tumor: Sphere { radius: self.tumor_radius, ..spec.tumor.clone() }, ..spec };
        spec.validate()?;
        Ok(spec)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::fitting([FIELD_MM; 3], self.detector)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { spline_degree: self.spline_degree, closure: self.spline_closure }
    }

    /// Held-out and retained angle indices for `count` angles.
    pub fn angle_partition(&self, count: usize) -> (Vec<usize>, Vec<usize>) {
        (0..count).partition(|i| i % self.holdout_stride != self.holdout_offset)
    }

    pub fn heldout_phases(&self) -> Vec<usize> {
        match self.holdout_phase {
            HoldoutPhase::All => (0..self.phases).collect(),
            HoldoutPhase::Index(j) => vec![j],
        }
    }

    /// The configuration as `key = value` lines, parseable by [`Self::from_file`].
    pub fn to_text(&self) -> String {
        let closure = match self.spline_closure {
            SplineClosure::Auto => "auto",
            SplineClosure::Clamped => "clamped",
            SplineClosure::Periodic => "periodic",
        };
        let holdout = match self.holdout_phase {
            HoldoutPhase::All => "all".to_string(),
            HoldoutPhase::Index(j) => j.to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("grid", self.grid.to_string()),
            ("detector_nu", self.detector[0].to_string()),
            ("detector_nv", self.detector[1].to_string()),
            ("angles", self.angles.to_string()),
            ("phases", self.phases.to_string()),
            ("f", self.f.to_string()),
            ("g", self.g.to_string()),
            ("modes_e", self.modes_e.to_string()),
            ("ridge", self.ridge.to_string()),
            ("holdout_stride", self.holdout_stride.to_string()),
            ("holdout_offset", self.holdout_offset.to_string()),
            ("holdout_phase", holdout),
            ("spline_degree", self.spline_degree.to_string()),
            ("spline_closure", closure.to_string()),
            ("amplitude_diaphragm", self.amplitude_diaphragm.to_string()),
            ("amplitude_tumor", self.amplitude_tumor.to_string()),
            ("chest_wall", self.chest_wall.to_string()),
            ("chest_wall_lag", self.chest_wall_lag.to_string()),
            ("supersample", self.supersample.to_string()),
            ("slice_profile", self.slice_profile.to_string()),
            ("tumor_radius", self.tumor_radius.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.cfg");
        std::fs::write(&p, "# comment\nf = 4\n\ng=7 # trailing\nholdout_phase = 2\nspline_closure = clamped\n").unwrap();
        let c = ExperimentConfig::from_file(&p).unwrap();
        assert_eq!((c.f, c.g), (4, 7));
        assert_eq!(c.holdout_phase, HoldoutPhase::Index(2));
        assert_eq!(c.spline_closure, SplineClosure::Clamped);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn text_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.cfg");
        let mut c = ExperimentConfig::default();
        c.set("ridge", "0.125").unwrap();
        c.set("chest_wall", "0").unwrap();
        std::fs::write(&p, c.to_text()).unwrap();
        let mut back = ExperimentConfig::from_file(&p).unwrap();
        back.out = c.out.clone();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_input() {
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("f", "x"), Err(Error::Config(_))));
        c.holdout_offset = 6;
        assert!(c.validate().is_err());
        let missing = ExperimentConfig { out: PathBuf::from("/definitely/not/here"), ..Default::default() };
        let err = missing.check_out_dir().unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let c = ExperimentConfig::default();
        let (keep, held) = c.angle_partition(60);
        assert_eq!(held, vec![3, 9, 15, 21, 27, 33, 39, 45, 51, 57]);
        assert_eq!(keep.len(), 50);
        let mut all: Vec<usize> = keep.iter().chain(&held).copied().collect();
        all.sort();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        let deg: Vec<f64> = held.iter().map(|&i| i as f64 * 6.0).collect();
        assert_eq!(&deg[..3], &[18.0, 54.0, 90.0]);
    }

    #[test]
    fn grid_override_keeps_field() {
        let c = ExperimentConfig { grid: 32, ..Default::default() };
        let s = c.phantom_spec().unwrap();
        assert_eq!(s.dims, [32; 3]);
        assert_eq!(s.spacing, [8.0; 3]);
    }
}
