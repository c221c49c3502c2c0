//! Single-projection commands working on saved model files.

use std::path::{Path, PathBuf};

use crate::bilinear;
use crate::bspline;
use crate::error::{Error, Result};
use crate::io;
use crate::regression;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOutput {
    pub angle: f64,
    pub resp_weights: Vec<f64>,
    /// Present when the model file carries a regression map.
    pub ssm_weights: Option<Vec<f64>>,
    pub condition_number: f64,
}

/// Respiratory weights of image `index` of a projection file. The angle
/// defaults to the one stored with the image.
pub fn cmd_estimate(model: &Path, projection: &Path, index: usize, angle: Option<f64>) -> Result<EstimateOutput> {
    let (m, reg) = io::read_model(model)?;
    let stack = io::read_stack(projection, m.pixel_spacing)?;
    let img = stack
        .images
        .get(index)
        .ok_or_else(|| Error::Input(format!("{} holds {} images, index {index} requested", projection.display(), stack.len())))?;
    let angle = angle.unwrap_or(stack.angles[index]);
    let est = bilinear::estimate_respiratory(&m, img, angle)?;
    let ssm_weights = reg.map(|r| regression::predict(&r, &est.weights)).transpose()?;
    Ok(EstimateOutput { angle, resp_weights: est.weights, ssm_weights, condition_number: est.condition_number })
}

#[derive(Clone, Debug, PartialEq)]
pub enum RotationInput {
    /// Interpolate the rotational weights at this angle (radians).
    Angle(f64),
    /// Use these rotational weights directly.
    Weights(Vec<f64>),
}

/// Synthesize a projection and write `synthesized.mprj` plus a PGM preview
/// into `out`. Explicit rotational weights are stored with angle 0.
pub fn cmd_synthesize(model: &Path, resp: &[f64], rot: &RotationInput, out: &Path) -> Result<PathBuf> {
    if !out.is_dir() {
        return Err(Error::io(out, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")));
    }
    let (m, _) = io::read_model(model)?;
    let (angle, rot) = match rot {
        RotationInput::Angle(a) => (*a, bspline::eval_spline(&m.rot_spline, *a)?),
        RotationInput::Weights(w) => (0.0, w.clone()),
    };
    let img = bilinear::synthesize(&m, resp, &rot)?;
    let path = out.join("synthesized.mprj");
    io::write_projection(&path, &img, angle)?;
    io::write_image_pgm(&out.join("synthesized.pgm"), &img, None)?;
    Ok(path)
}
