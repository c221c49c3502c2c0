//! Bilinear projection model `D ≈ ℳ ×1 A ×2 B`.
//!
//! The data tensor is `pixels × phases × angles`. Training takes the leading
//! left singular vectors of the phase and angle unfoldings as `A` and `B`
//! and keeps the pixel mode unreduced, so `ℳ = D ×1 Aᵀ ×2 Bᵀ`. There is no
//! mean subtraction: the first component of each factor carries the data
//! mean.
//!
//! For a projection at a known angle, the rotational weights come from a
//! B-spline through the rows of `B`; contracting `ℳ` with them leaves a
//! `pixels × f` matrix whose pseudo-inverse yields the respiratory weights.

use nalgebra::{DMatrix, DVector};

use crate::bspline::{self, SplineCurve};
use crate::error::{Error, Result};
use crate::linalg;
use crate::phantom::Phase;
use crate::projector::{ProjectionImage, ProjectionStack};
use crate::tensor::{self, Tensor3};

/// Stack per-phase projection stacks into a `pixels × F × G` tensor;
/// entry `(p, j, i)` is pixel `p` of phase `j` at angle `i`.
pub fn build_data_tensor(stacks: &[ProjectionStack]) -> Result<Tensor3> {
    let first = stacks.first().ok_or_else(|| Error::Input("no projection stacks".into()))?;
    let first_img = first.images.first().ok_or_else(|| Error::Input("empty projection stack".into()))?;
    let dims = first_img.dims();
    let pixels = dims[0] * dims[1];
    for (j, s) in stacks.iter().enumerate() {
        if s.angles != first.angles {
            return Err(Error::Input(format!("stack {j} was taken along a different trajectory")));
        }
        if s.images.iter().any(|im| im.dims() != dims) {
            return Err(Error::Input(format!("stack {j} has inconsistent detector dims")));
        }
    }
    let (f, g) = (stacks.len(), first.len());
    let mut values = Vec::with_capacity(pixels * f * g);
    for i in 0..g {
        for s in stacks {
            values.extend_from_slice(s.images[i].values());
        }
    }
    Tensor3::new([pixels, f, g], values)
}

/// How the rotational spline treats the ends of the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplineClosure {
    /// Periodic when the training angles span a full circle, clamped otherwise.
    #[default]
    Auto,
    Clamped,
    Periodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub spline_degree: usize,
    pub closure: SplineClosure,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { spline_degree: 3, closure: SplineClosure::Auto }
    }
}

#[derive(Clone, Debug)]
pub struct BilinearModel {
    /// `pixels × f × g`.
    pub core: Tensor3,
    /// `F × f`.
    pub resp_weights: DMatrix<f64>,
    /// `G × g`.
    pub rot_weights: DMatrix<f64>,
    pub angles: Vec<f64>,
    pub phases: Vec<Phase>,
    pub rot_spline: SplineCurve,
    pub detector: [usize; 2],
    pub pixel_spacing: [f64; 2],
    /// Singular values of the phase unfolding (all of them).
    pub resp_singular_values: Vec<f64>,
    /// Singular values of the angle unfolding (all of them).
    pub rot_singular_values: Vec<f64>,
    /// `‖D − ℳ ×1 A ×2 B‖_F / ‖D‖_F` on the training tensor.
    pub truncation_error: f64,
}

/// `ℳ ×2 b(φ)` collapsed to `pixels × f`.
#[derive(Clone, Debug)]
pub struct AngleModelMatrix {
    pub matrix: DMatrix<f64>,
    pub angle: f64,
    pub condition_number: f64,
}

#[derive(Clone, Debug)]
pub struct RespiratoryEstimate {
    pub weights: Vec<f64>,
    pub rot_weights: Vec<f64>,
    pub condition_number: f64,
    pub rank: usize,
}

pub fn train_bilinear(d: &Tensor3, f: usize, g: usize, angles: &[f64], phases: &[Phase]) -> Result<BilinearModel> {
    train_bilinear_with(d, f, g, angles, phases, [0, 0], [1.0, 1.0], &TrainOptions::default())
}

/// Train with explicit detector metadata and spline options. `detector` of
/// `[0, 0]` means a single-row detector of `pixels` columns.
#[allow(clippy::too_many_arguments)]
pub fn train_bilinear_with(
    d: &Tensor3,
    f: usize,
    g: usize,
    angles: &[f64],
    phases: &[Phase],
    detector: [usize; 2],
    pixel_spacing: [f64; 2],
    opts: &TrainOptions,
) -> Result<BilinearModel> {
    let [pixels, n_phases, n_angles] = d.dims();
    if angles.len() != n_angles || phases.len() != n_phases {
        return Err(Error::Dimension(format!(
            "tensor has {n_phases} phases × {n_angles} angles, got {} phases and {} angles",
            phases.len(),
            angles.len()
        )));
    }
    if f == 0 || f > n_phases {
        return Err(Error::Dimension(format!("respiratory rank {f} outside 1..={n_phases}")));
    }
    if g == 0 || g > n_angles {
        return Err(Error::Dimension(format!("rotational rank {g} outside 1..={n_angles}")));
    }
    if n_angles < 2 {
        return Err(Error::Dimension("need at least two training angles".into()));
    }
    let detector = if detector == [0, 0] { [pixels, 1] } else { detector };
    if detector[0] * detector[1] != pixels {
        return Err(Error::Dimension(format!("detector {detector:?} does not match {pixels} pixels")));
    }

    let (a, resp_sv) = tensor::leading_factor(d, 1, f)?;
    let (b, rot_sv) = tensor::leading_factor(d, 2, g)?;
    let core = tensor::mode_product(&tensor::mode_product(d, &a.transpose(), 1)?, &b.transpose(), 2)?;

    let rebuilt = tensor::mode_product(&tensor::mode_product(&core, &a, 1)?, &b, 2)?;
    let truncation_error = rebuilt.relative_error(d);

    let periodic = match opts.closure {
        SplineClosure::Auto => bspline::spans_full_circle(angles),
        SplineClosure::Clamped => false,
        SplineClosure::Periodic => true,
    };
    let degree = opts.spline_degree.min(n_angles - 1);
    let rot_spline = bspline::fit_spline(angles, &b, degree, periodic)?;
    log::debug!(
        "bilinear model f={f} g={g} on {pixels}×{n_phases}×{n_angles}: truncation {truncation_error:.3e}, periodic spline {periodic}"
    );

    Ok(BilinearModel {
        core,
        resp_weights: a,
        rot_weights: b,
        angles: angles.to_vec(),
        phases: phases.to_vec(),
        rot_spline,
        detector,
        pixel_spacing,
        resp_singular_values: resp_sv,
        rot_singular_values: rot_sv,
        truncation_error,
    })
}

impl BilinearModel {
    pub fn pixels(&self) -> usize {
        self.core.dims()[0]
    }

    pub fn f(&self) -> usize {
        self.core.dims()[1]
    }

    pub fn g(&self) -> usize {
        self.core.dims()[2]
    }

    /// `ℳ ×1 A ×2 B`.
    pub fn reconstruct_training(&self) -> Tensor3 {
        let t = tensor::mode_product(&self.core, &self.resp_weights, 1).expect("shapes fixed at training");
        tensor::mode_product(&t, &self.rot_weights, 2).expect("shapes fixed at training")
    }

    /// Cumulative share of `‖D‖²` captured by the leading respiratory components.
    pub fn resp_explained_variance(&self) -> Vec<f64> {
        cumulative_energy(&self.resp_singular_values)
    }

    pub fn rot_explained_variance(&self) -> Vec<f64> {
        cumulative_energy(&self.rot_singular_values)
    }

    fn image(&self, values: Vec<f64>) -> Result<ProjectionImage> {
        ProjectionImage::new(self.detector, self.pixel_spacing, values)
    }
}

fn cumulative_energy(s: &[f64]) -> Vec<f64> {
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut acc = 0.0;
    s.iter()
        .map(|x| {
            acc += x * x;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// Contract the core with explicit rotational weights.
pub fn model_matrix_for(m: &BilinearModel, rot: &[f64]) -> Result<DMatrix<f64>> {
    if rot.len() != m.g() {
        return Err(Error::Dimension(format!("model has g={}, got {} rotational weights", m.g(), rot.len())));
    }
    let b = DMatrix::from_row_slice(1, rot.len(), rot);
    let collapsed = tensor::mode_product(&m.core, &b, 2)?;
    Ok(DMatrix::from_column_slice(m.pixels(), m.f(), collapsed.values()))
}

/// Angle-conditioned model matrix from the interpolated rotational weights.
pub fn angle_model(m: &BilinearModel, angle: f64) -> Result<AngleModelMatrix> {
    let rot = bspline::eval_spline(&m.rot_spline, angle)?;
    let matrix = model_matrix_for(m, &rot)?;
    let sv = matrix.singular_values();
    Ok(AngleModelMatrix { condition_number: linalg::condition_number(sv.as_slice()), matrix, angle })
}

/// Least-squares respiratory weights for a projection at a known angle.
pub fn estimate_respiratory(m: &BilinearModel, p: &ProjectionImage, angle: f64) -> Result<RespiratoryEstimate> {
    if p.dims() != m.detector {
        return Err(Error::Dimension(format!("projection is {:?}, model detector is {:?}", p.dims(), m.detector)));
    }
    let rot = bspline::eval_spline(&m.rot_spline, angle)?;
    let matrix = model_matrix_for(m, &rot)?;
    if matrix.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateModel(format!("angle model matrix at {angle:.6} rad is zero")));
    }
    let sol = linalg::pinv_solve(&matrix, &DVector::from_column_slice(p.values()));
    let condition_number = linalg::condition_number(&sol.singular_values);
    log::trace!("estimate at {angle:.4} rad: rank {} cond {condition_number:.3e}", sol.rank);
    Ok(RespiratoryEstimate { weights: sol.x.iter().cloned().collect(), rot_weights: rot, condition_number, rank: sol.rank })
}

/// `ℳ ×1 resp ×2 rot` as a detector image.
pub fn synthesize(m: &BilinearModel, resp: &[f64], rot: &[f64]) -> Result<ProjectionImage> {
    if resp.len() != m.f() {
        return Err(Error::Dimension(format!("model has f={}, got {} respiratory weights", m.f(), resp.len())));
    }
    let matrix = model_matrix_for(m, rot)?;
    let img = matrix * DVector::from_column_slice(resp);
    m.image(img.iter().cloned().collect())
}

/// Estimate the respiratory weights of `p` and rebuild it from the model.
pub fn rebuild(m: &BilinearModel, p: &ProjectionImage, angle: f64) -> Result<(RespiratoryEstimate, ProjectionImage)> {
    let est = estimate_respiratory(m, p, angle)?;
    let img = synthesize(m, &est.weights, &est.rot_weights)?;
    Ok((est, img))
}
