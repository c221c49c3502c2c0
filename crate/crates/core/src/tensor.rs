//! Dense rank-3 tensors with mode unfoldings, mode products and HOSVD.
//!
//! Storage order: index 0 varies fastest, so entry `(i, j, k)` lives at
//! `i + d0 * (j + d1 * k)`. The mode-`m` unfolding is a `d_m × (∏ others)`
//! matrix whose columns enumerate the remaining modes with the lower-numbered
//! mode varying fastest:
//!
//! | mode | row | column          |
//! |------|-----|-----------------|
//! | 0    | `i` | `j + d1 * k`    |
//! | 1    | `j` | `i + d0 * k`    |
//! | 2    | `k` | `i + d0 * j`    |
//!
//! Because `nalgebra` matrices are column-major, the mode-0 unfolding is the
//! flat value array reinterpreted without reordering.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{self, ThinSvd};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("tensor dims must be positive, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if values.len() != len {
            return Err(Error::Dimension(format!("tensor dims {dims:?} need {len} values, got {}", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite tensor entry at flat index {pos}")));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive");
        Self { dims, values: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = t.index(i, j, k);
                    t.values[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    /// The mode-0 fibre `(:, j, k)`.
    pub fn fibre0(&self, j: usize, k: usize) -> &[f64] {
        let start = self.index(0, j, k);
        &self.values[start..start + self.dims[0]]
    }

    /// Sub-tensor keeping the listed mode-1 and mode-2 indices, in the given order.
    pub fn select(&self, keep1: &[usize], keep2: &[usize]) -> Result<Tensor3> {
        if let Some(&bad) = keep1.iter().find(|&&j| j >= self.dims[1]) {
            return Err(Error::Dimension(format!("mode-1 index {bad} out of range {}", self.dims[1])));
        }
        if let Some(&bad) = keep2.iter().find(|&&k| k >= self.dims[2]) {
            return Err(Error::Dimension(format!("mode-2 index {bad} out of range {}", self.dims[2])));
        }
        let mut values = Vec::with_capacity(self.dims[0] * keep1.len() * keep2.len());
        for &k in keep2 {
            for &j in keep1 {
                values.extend_from_slice(self.fibre0(j, k));
            }
        }
        Tensor3::new([self.dims[0], keep1.len(), keep2.len()], values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute when `other` is zero).
    pub fn relative_error(&self, reference: &Tensor3) -> f64 {
        assert_eq!(self.dims, reference.dims);
        let diff: f64 = self.values.iter().zip(&reference.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let n = reference.frobenius_norm();
        if n > 0.0 {
            diff / n
        } else {
            diff
        }
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if mode > 2 {
        return Err(Error::Dimension(format!("mode must be 0, 1 or 2, got {mode}")));
    }
    Ok(())
}

fn other_extent(dims: [usize; 3], mode: usize) -> usize {
    dims.iter().enumerate().filter(|&(m, _)| m != mode).map(|(_, d)| d).product()
}

/// Mode-`mode` unfolding; see the module docs for the column order.
pub fn unfold(t: &Tensor3, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(mode)?;
    let [d0, d1, d2] = t.dims;
    let m = match mode {
        0 => DMatrix::from_column_slice(d0, d1 * d2, &t.values),
        1 => DMatrix::from_fn(d1, d0 * d2, |j, c| t.get(c % d0, j, c / d0)),
        _ => DMatrix::from_fn(d2, d0 * d1, |k, c| t.get(c % d0, c / d0, k)),
    };
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
    check_mode(mode)?;
    if dims.contains(&0) {
        return Err(Error::Dimension(format!("tensor dims must be positive, got {dims:?}")));
    }
    let expect = (dims[mode], other_extent(dims, mode));
    if m.shape() != expect {
        return Err(Error::Dimension(format!(
            "cannot fold {:?} matrix along mode {mode} into {dims:?} (expected {expect:?})",
            m.shape()
        )));
    }
    let d0 = dims[0];
    let t = match mode {
        0 => Tensor3 { dims, values: m.as_slice().to_vec() },
        1 => Tensor3::from_fn(dims, |i, j, k| m[(j, i + d0 * k)]),
        _ => Tensor3::from_fn(dims, |i, j, k| m[(k, i + d0 * j)]),
    };
    Ok(t)
}

/// `t ×_mode m`: contracts mode `mode` of `t` with the columns of `m`
/// (`r × d_mode`), giving a tensor whose `mode` extent is `r`.
pub fn mode_product(t: &Tensor3, m: &DMatrix<f64>, mode: usize) -> Result<Tensor3> {
    check_mode(mode)?;
    let [d0, d1, d2] = t.dims;
    if m.ncols() != t.dims[mode] || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "mode-{mode} product needs a matrix with {} columns, got {:?}",
            t.dims[mode],
            m.shape()
        )));
    }
    let r = m.nrows();
    let mut dims = t.dims;
    dims[mode] = r;
    let values = match mode {
        0 => {
            let x = DMatrix::from_column_slice(d0, d1 * d2, &t.values);
            (m * x).as_slice().to_vec()
        }
        1 => {
            // Each mode-2 slab is a column-major d0 × d1 matrix.
            let mt = m.transpose();
            let slab_out = d0 * r;
            let mut out = vec![0.0; slab_out * d2];
            exec::for_each_chunk_mut(&mut out, slab_out, |k, chunk| {
                let slab = DMatrix::from_column_slice(d0, d1, &t.values[k * d0 * d1..(k + 1) * d0 * d1]);
                chunk.copy_from_slice((slab * &mt).as_slice());
            });
            out
        }
        _ => {
            let x = DMatrix::from_column_slice(d0 * d1, d2, &t.values);
            (x * m.transpose()).as_slice().to_vec()
        }
    };
    Ok(Tensor3 { dims, values })
}

/// SVD of one unfolding: `unfold(t, mode) = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct ModeSvd {
    pub mode: usize,
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl ModeSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        ThinSvd { u: self.u.clone(), s: self.s.clone(), vt: self.vt.clone() }.reconstruct()
    }
}

/// Rank-truncated SVD of the mode-`mode` unfolding. Unfoldings with a side
/// longer than [`linalg::DIRECT_SVD_LIMIT`] go through the small-side Gram
/// matrix.
pub fn mode_svd(t: &Tensor3, mode: usize) -> Result<ModeSvd> {
    let x = unfold(t, mode)?;
    let svd = linalg::thin_svd(&x);
    Ok(ModeSvd { mode, u: svd.u, s: svd.s, vt: svd.vt })
}

/// Leading `rank` left singular vectors of the mode unfolding. When the
/// unfolding's numerical rank is smaller, the basis is completed with
/// orthonormal complement directions.
pub fn leading_factor(t: &Tensor3, mode: usize, rank: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let max = t.dims[mode].min(other_extent(t.dims, mode));
    if rank == 0 || rank > max {
        return Err(Error::Dimension(format!("mode-{mode} rank {rank} outside 1..={max} for dims {:?}", t.dims)));
    }
    let svd = mode_svd(t, mode)?;
    let u = linalg::complete_orthonormal(&svd.u, rank);
    Ok((u, svd.s))
}

#[derive(Clone, Debug)]
pub struct HosvdResult {
    pub core: Tensor3,
    pub factors: [DMatrix<f64>; 3],
    /// Singular values of each unfolding (all of them, not just the kept ones).
    pub singular_values: [Vec<f64>; 3],
}

impl HosvdResult {
    /// `core ×0 U0 ×1 U1 ×2 U2`.
    pub fn reconstruct(&self) -> Tensor3 {
        let a = mode_product(&self.core, &self.factors[0], 0).expect("factor shapes fixed at construction");
        let b = mode_product(&a, &self.factors[1], 1).expect("factor shapes fixed at construction");
        mode_product(&b, &self.factors[2], 2).expect("factor shapes fixed at construction")
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }
}

/// Truncated higher-order SVD with per-mode ranks.
pub fn hosvd(t: &Tensor3, ranks: [usize; 3]) -> Result<HosvdResult> {
    let mut factors = Vec::with_capacity(3);
    let mut svals = Vec::with_capacity(3);
    for (mode, &r) in ranks.iter().enumerate() {
        let (u, s) = leading_factor(t, mode, r)?;
        factors.push(u);
        svals.push(s);
    }
    let mut core = t.clone();
    for (mode, u) in factors.iter().enumerate() {
        core = mode_product(&core, &u.transpose(), mode)?;
    }
    let factors: [DMatrix<f64>; 3] = factors.try_into().expect("three factors");
    let singular_values: [Vec<f64>; 3] = svals.try_into().expect("three spectra");
    Ok(HosvdResult { core, factors, singular_values })
}
