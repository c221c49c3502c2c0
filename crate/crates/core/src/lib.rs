//! Bilinear models that separate breathing motion from gantry rotation in
//! rotational X-ray projection data.
//!
//! A prior 4D volume set is forward projected along a circular trajectory;
//! the resulting `pixels × phases × angles` data tensor is decomposed with a
//! (partial) HOSVD into a model tensor and two weight matrices. Rotational
//! weights are interpolated over the gantry angle with a B-spline so that,
//! for a projection at a known angle, the respiratory weights follow from a
//! single linear least-squares solve.
//!
//! Module map:
//!
//! - [`tensor`]: dense rank-3 tensors, unfoldings, mode products, HOSVD
//! - [`projector`]: parallel-beam ray-driven forward projector
//! - [`phantom`]: synthetic 4D breathing phantom
//! - [`ssm`]: PCA shape model over volumes
//! - [`bspline`]: vector-valued interpolating B-spline curves
//! - [`bilinear`]: model training, angle-conditioned estimation, synthesis
//! - [`regression`]: linear map from bilinear weights to shape-model weights
//! - [`io`]: binary volume/projection/model file formats, PGM and CSV output
//! - [`harness`]: configuration and the experiment drivers behind the CLI

pub mod bilinear;
pub mod bspline;
mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod phantom;
pub mod projector;
pub mod regression;
pub mod ssm;
pub mod tensor;

pub use bilinear::{AngleModelMatrix, BilinearModel};
pub use bspline::SplineCurve;
pub use error::{Error, Result};
pub use phantom::{PhantomSpec, Phase};
pub use projector::{Geometry, ProjectionImage, ProjectionStack, Trajectory, Volume};
pub use regression::RegressionMap;
pub use ssm::ShapeModel;
pub use tensor::{HosvdResult, ModeSvd, Tensor3};
