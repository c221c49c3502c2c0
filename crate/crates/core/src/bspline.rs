//! Vector-valued interpolating B-spline curves over the gantry angle.
//!
//! Angles map to the curve parameter uniformly. A clamped curve uses
//! `u = (φ − φ_min) / (φ_max − φ_min)` with averaged knots; a periodic curve
//! closes the circle with `u = ((φ − φ_min) mod 2π) / 2π` and knots at the
//! data sites (odd degree) or between them (even degree). Control points
//! come from solving the collocation system, so the curve passes through
//! every data row.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Trajectories spanning at least this many degrees get a closed curve.
pub const CLOSURE_SPAN_DEG: f64 = 354.0;

const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SplineCurve {
    degree: usize,
    periodic: bool,
    /// Clamped: the full knot vector (`n + degree + 1` entries).
    /// Periodic: one period of knots in `[0, 1)`, extended by translation.
    knots: Vec<f64>,
    /// `n_ctrl × g`.
    ctrl: DMatrix<f64>,
    angle_min: f64,
    angle_max: f64,
}

/// Whether a trajectory with these (increasing) angles should be closed.
pub fn spans_full_circle(angles: &[f64]) -> bool {
    match (angles.first(), angles.last()) {
        (Some(a), Some(b)) => (b - a).to_degrees() >= CLOSURE_SPAN_DEG - 1e-9,
        _ => false,
    }
}

impl SplineCurve {
    /// Rebuild a curve from stored parts (used when loading model files).
    pub fn from_parts(
        degree: usize,
        periodic: bool,
        knots: Vec<f64>,
        ctrl: DMatrix<f64>,
        angle_min: f64,
        angle_max: f64,
    ) -> Result<Self> {
        let n = ctrl.nrows();
        let expect = if periodic { n } else { n + degree + 1 };
        if degree == 0 || knots.len() != expect || n < degree + 1 {
            return Err(Error::Dimension(format!(
                "spline of degree {degree} with {n} control points needs {expect} knots, got {}",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Input("knot vector must be non-decreasing".into()));
        }
        if angle_max.is_nan() || angle_min.is_nan() || angle_max <= angle_min {
            return Err(Error::Input("spline angle domain is empty".into()));
        }
        Ok(Self { degree, periodic, knots, ctrl, angle_min, angle_max })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &DMatrix<f64> {
        &self.ctrl
    }

    pub fn control_points_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.ctrl
    }

    pub fn angle_domain(&self) -> (f64, f64) {
        (self.angle_min, self.angle_max)
    }

    /// Output dimension `g`.
    pub fn dim(&self) -> usize {
        self.ctrl.ncols()
    }

    /// Curve parameter of an angle.
    pub fn parameter(&self, angle: f64) -> Result<f64> {
        if !angle.is_finite() {
            return Err(Error::Domain(format!("angle {angle} is not finite")));
        }
        if self.periodic {
            let u = (angle - self.angle_min).rem_euclid(TAU) / TAU;
            return Ok(if u >= 1.0 { 0.0 } else { u });
        }
        let span = self.angle_max - self.angle_min;
        let slack = DOMAIN_SLACK * span.max(1.0);
        if angle < self.angle_min - slack || angle > self.angle_max + slack {
            return Err(Error::Domain(format!(
                "angle {angle:.6} rad outside spline domain [{:.6}, {:.6}]",
                self.angle_min, self.angle_max
            )));
        }
        Ok(((angle - self.angle_min) / span).clamp(0.0, 1.0))
    }

    fn knot(&self, j: isize) -> f64 {
        if self.periodic {
            let n = self.knots.len() as isize;
            self.knots[j.rem_euclid(n) as usize] + j.div_euclid(n) as f64
        } else {
            self.knots[j as usize]
        }
    }

    /// Non-zero basis functions at `u` as `(control index, value)` pairs.
    pub fn basis(&self, u: f64) -> Vec<(usize, f64)> {
        let p = self.degree;
        let n = self.ctrl.nrows();
        let span = if self.periodic {
            // Largest m with τ_m ≤ u, searching one period starting at 0.
            self.knots.partition_point(|&k| k <= u) as isize - 1
        } else if u >= self.knots[n] {
            (n - 1) as isize
        } else {
            (self.knots.partition_point(|&k| k <= u) - 1) as isize
        };
        let vals = basis_funs(span, u, p, |j| self.knot(j));
        vals.into_iter()
            .enumerate()
            .map(|(r, v)| {
                let j = span - p as isize + r as isize;
                (j.rem_euclid(n as isize) as usize, v)
            })
            .collect()
    }

    /// Curve value at parameter `u`.
    pub fn eval_param(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (idx, w) in self.basis(u) {
            for (o, c) in out.iter_mut().zip(self.ctrl.row(idx).iter()) {
                *o += w * c;
            }
        }
        out
    }
}

/// Cox–de Boor triangular scheme: the `p + 1` non-zero basis functions
/// `N_{span−p..=span}` at `u`, for any knot accessor.
fn basis_funs(span: isize, u: f64, p: usize, knot: impl Fn(isize) -> f64) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knot(span + 1 - j as isize);
        right[j] = knot(span + j as isize) - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Interpolating curve through `weights` (row `i` at `angles[i]`).
pub fn fit_spline(angles: &[f64], weights: &DMatrix<f64>, degree: usize, periodic: bool) -> Result<SplineCurve> {
    let n = angles.len();
    if weights.nrows() != n {
        return Err(Error::Dimension(format!("{n} angles but {} weight rows", weights.nrows())));
    }
    if degree == 0 {
        return Err(Error::Config("spline degree must be at least 1".into()));
    }
    if n < degree + 1 {
        return Err(Error::Config(format!("degree-{degree} spline needs at least {} points, got {n}", degree + 1)));
    }
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input("spline angles must be finite".into()));
    }
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("spline angles must be strictly increasing (no duplicates)".into()));
    }
    let (amin, amax) = (angles[0], angles[n - 1]);
    if periodic && amax - amin >= TAU {
        return Err(Error::Input("periodic spline angles must span less than a full turn".into()));
    }

    let params: Vec<f64> = if periodic {
        angles.iter().map(|a| (a - amin) / TAU).collect()
    } else {
        angles.iter().map(|a| (a - amin) / (amax - amin)).collect()
    };
    let knots = if periodic {
        if degree % 2 == 1 {
            params.clone()
        } else {
            (0..n)
                .map(|i| {
                    let next = if i + 1 < n { params[i + 1] } else { 1.0 + params[0] };
                    0.5 * (params[i] + next)
                })
                .collect()
        }
    } else {
        averaged_knots(&params, degree)
    };

    let mut curve =
        SplineCurve { degree, periodic, knots, ctrl: DMatrix::zeros(n, weights.ncols()), angle_min: amin, angle_max: amax };
    let mut system = DMatrix::zeros(n, n);
    for (i, &u) in params.iter().enumerate() {
        for (j, v) in curve.basis(u) {
            system[(i, j)] += v;
        }
    }
    let lu = system.lu();
    let ctrl = lu.solve(weights).ok_or_else(|| Error::Input("singular spline collocation system".into()))?;
    curve.ctrl = ctrl;
    Ok(curve)
}

/// Clamped knot vector with interior knots averaged over `degree`
/// consecutive parameters.
fn averaged_knots(params: &[f64], p: usize) -> Vec<f64> {
    let n = params.len();
    let mut knots = vec![0.0; n + p + 1];
    for j in 1..n - p {
        knots[j + p] = params[j..j + p].iter().sum::<f64>() / p as f64;
    }
    for k in knots.iter_mut().skip(n) {
        *k = 1.0;
    }
    knots
}

/// Curve value at a gantry angle.
pub fn eval_spline(c: &SplineCurve, angle: f64) -> Result<Vec<f64>> {
    Ok(c.eval_param(c.parameter(angle)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn six_degree_angles(skip_every_sixth: bool) -> Vec<f64> {
        (0..60).filter(|i| !skip_every_sixth || i % 6 != 3).map(|i| (i as f64 * 6.0).to_radians()).collect()
    }

    fn random_weights(n: usize, g: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, g, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn interpolates_training_rows() {
        let angles = six_degree_angles(true);
        let w = random_weights(angles.len(), 4, 1);
        for periodic in [false, true] {
            let c = fit_spline(&angles, &w, 3, periodic).unwrap();
            for (i, &a) in angles.iter().enumerate() {
                let v = eval_spline(&c, a).unwrap();
                for k in 0..4 {
                    assert!((v[k] - w[(i, k)]).abs() < 1e-9, "periodic={periodic} row {i}");
                }
            }
        }
    }

    #[test]
    fn constant_rows_give_constant_curve() {
        let angles = six_degree_angles(false);
        let w = DMatrix::from_fn(60, 2, |_, k| [1.5, -0.25][k]);
        for periodic in [false, true] {
            let c = fit_spline(&angles, &w, 3, periodic).unwrap();
            for s in 0..100 {
                let a = s as f64 * 0.0354;
                let v = eval_spline(&c, a.min(angles[59])).unwrap();
                assert!((v[0] - 1.5).abs() < 1e-12 && (v[1] + 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_precision() {
        let angles = six_degree_angles(true);
        let (amin, amax) = (angles[0], angles[angles.len() - 1]);
        let u = |a: f64| (a - amin) / (amax - amin);
        let w = DMatrix::from_fn(angles.len(), 2, |i, k| if k == 0 { 2.0 * u(angles[i]) - 1.0 } else { 3.0 - u(angles[i]) });
        let c = fit_spline(&angles, &w, 3, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = rng.random_range(amin..amax);
            let v = eval_spline(&c, a).unwrap();
            assert!((v[0] - (2.0 * u(a) - 1.0)).abs() < 1e-9);
            assert!((v[1] - (3.0 - u(a))).abs() < 1e-9);
        }
        // Midpoint between two training angles: mean of the rows.
        let mid = 0.5 * (angles[10] + angles[11]);
        let v = eval_spline(&c, mid).unwrap();
        assert!((v[0] - 0.5 * (w[(10, 0)] + w[(11, 0)])).abs() < 1e-9);
    }

    #[test]
    fn clamped_end_and_partition_of_unity() {
        let angles = six_degree_angles(true);
        let w = random_weights(angles.len(), 3, 3);
        for periodic in [false, true] {
            let c = fit_spline(&angles, &w, 3, periodic).unwrap();
            let v = eval_spline(&c, angles[0]).unwrap();
            assert!((0..3).all(|k| (v[k] - w[(0, k)]).abs() < 1e-9));
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let u: f64 = rng.random_range(0.0..1.0);
                let s: f64 = c.basis(u).iter().map(|(_, v)| v).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn periodic_curve_closes() {
        let angles = six_degree_angles(false);
        let w = random_weights(60, 2, 5);
        let c = fit_spline(&angles, &w, 3, true).unwrap();
        let a = eval_spline(&c, 0.0).unwrap();
        let b = eval_spline(&c, TAU - 1e-13).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        // Angles beyond a turn wrap.
        let x = eval_spline(&c, 0.3).unwrap();
        let y = eval_spline(&c, 0.3 + TAU).unwrap();
        assert!((x[0] - y[0]).abs() < 1e-9);
        assert!(spans_full_circle(&angles));
        assert!(!spans_full_circle(&angles[..30]));
    }

    #[test]
    fn even_degree_periodic() {
        let angles = six_degree_angles(true);
        let w = random_weights(angles.len(), 2, 6);
        let c = fit_spline(&angles, &w, 2, true).unwrap();
        for (i, &a) in angles.iter().enumerate() {
            let v = eval_spline(&c, a).unwrap();
            assert!((v[0] - w[(i, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn locality() {
        let angles = six_degree_angles(false);
        let w = random_weights(60, 1, 7);
        let c = fit_spline(&angles, &w, 3, false).unwrap();
        let mut bumped = c.clone();
        let j = 20;
        bumped.control_points_mut()[(j, 0)] += 1.0;
        // Support of N_j is [t_j, t_{j+p+1}].
        let (lo, hi) = (c.knots()[j], c.knots()[j + 4]);
        for s in 0..=1000 {
            let u = s as f64 / 1000.0;
            let d = (bumped.eval_param(u)[0] - c.eval_param(u)[0]).abs();
            if u < lo || u > hi {
                assert!(d == 0.0, "u={u} outside [{lo},{hi}] changed by {d}");
            }
        }
    }

    #[test]
    fn errors() {
        let w = random_weights(3, 1, 8);
        assert!(matches!(fit_spline(&[0.0, 0.1, 0.2], &w, 3, false), Err(Error::Config(_))));
        let w4 = random_weights(4, 1, 8);
        assert!(matches!(fit_spline(&[0.0, 0.1, 0.1, 0.2], &w4, 3, false), Err(Error::Input(_))));
        let c = fit_spline(&[0.0, 0.1, 0.2, 0.3], &w4, 3, false).unwrap();
        assert!(matches!(eval_spline(&c, 0.5), Err(Error::Domain(_))));
        assert!(matches!(eval_spline(&c, -0.01), Err(Error::Domain(_))));
    }
}
