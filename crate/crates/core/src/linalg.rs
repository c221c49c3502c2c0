//! Dense linear-algebra building blocks shared by the tensor, shape-model
//! and estimation code.
//!
//! Eigen- and singular-value kernels come from `nalgebra`; this module adds
//! the economy (small-side Gram) SVD used for very tall or very wide
//! unfoldings, rank truncation, orthonormal completion and the truncated
//! pseudo-inverse solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::exec;

/// Singular values below `RANK_TOL * s_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Largest side length for which the direct SVD is used.
pub const DIRECT_SVD_LIMIT: usize = 512;

/// Thin SVD `x = u · diag(s) · vt`, rank-truncated.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }
}

/// Which algorithm [`thin_svd`] picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvdPath {
    Direct,
    Gram,
}

pub fn svd_path(rows: usize, cols: usize) -> SvdPath {
    if rows <= DIRECT_SVD_LIMIT && cols <= DIRECT_SVD_LIMIT {
        SvdPath::Direct
    } else {
        SvdPath::Gram
    }
}

/// Rank-truncated thin SVD. Uses a direct SVD when both sides are at most
/// [`DIRECT_SVD_LIMIT`], the small-side Gram route otherwise.
pub fn thin_svd(x: &DMatrix<f64>) -> ThinSvd {
    match svd_path(x.nrows(), x.ncols()) {
        SvdPath::Direct => direct_svd(x),
        SvdPath::Gram => gram_svd(x),
    }
}

/// Rank-truncated thin SVD through `nalgebra`'s bidiagonal SVD.
pub fn direct_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return empty_svd(m, n);
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap().then(a.cmp(&b)));
    let smax = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let keep: Vec<usize> = order.into_iter().filter(|&i| smax > 0.0 && svd.singular_values[i] > RANK_TOL * smax).collect();
    ThinSvd {
        u: DMatrix::from_fn(m, keep.len(), |r, c| u[(r, keep[c])]),
        s: keep.iter().map(|&i| svd.singular_values[i]).collect(),
        vt: DMatrix::from_fn(keep.len(), n, |r, c| vt[(keep[r], c)]),
    }
}

/// Economy SVD through the eigendecomposition of the smaller Gram matrix.
///
/// For a tall `x` (m ≥ n) the right singular vectors come from
/// `eig(xᵀx)`; singular values are taken as `‖x·v‖` rather than `√λ`, which
/// keeps them accurate in absolute terms, and the left vectors `x·v / s` get
/// two Gram–Schmidt passes. The work is `O(m·n²)`: linear in the long side.
pub fn gram_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return empty_svd(m, n);
    }
    if m >= n {
        tall_gram_svd(x)
    } else {
        let t = tall_gram_svd(&x.transpose());
        ThinSvd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() }
    }
}

fn empty_svd(m: usize, n: usize) -> ThinSvd {
    ThinSvd { u: DMatrix::zeros(m, 0), s: Vec::new(), vt: DMatrix::zeros(0, n) }
}

fn tall_gram_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = x.shape();
    let gram = column_gram(x);
    let eig = SymmetricEigen::new(gram);
    let v = eig.eigenvectors;

    // w_i = x · v_i, one column per task.
    let cols: Vec<DVector<f64>> = exec::map_range(n, |i| x * v.column(i));
    let norms: Vec<f64> = cols.iter().map(|c| c.norm()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let smax = norms[order[0]];
    let keep: Vec<usize> = order.into_iter().filter(|&i| smax > 0.0 && norms[i] > RANK_TOL * smax).collect();

    let mut u = DMatrix::zeros(m, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        u.column_mut(c).copy_from(&(&cols[i] / norms[i]));
    }
    reorthonormalize(&mut u);
    ThinSvd { s: keep.iter().map(|&i| norms[i]).collect(), vt: DMatrix::from_fn(keep.len(), n, |r, c| v[(c, keep[r])]), u }
}

/// `xᵀx`, with each entry accumulated sequentially so the result does not
/// depend on the thread schedule.
pub fn column_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let rows: Vec<Vec<f64>> = exec::map_range(n, |i| {
        let ci = x.column(i);
        (0..=i).map(|j| ci.dot(&x.column(j))).collect()
    });
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &val) in row.iter().enumerate() {
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
    }
    g
}

/// Two passes of modified Gram–Schmidt over the columns, in order.
fn reorthonormalize(u: &mut DMatrix<f64>) {
    for _ in 0..2 {
        for j in 0..u.ncols() {
            for k in 0..j {
                let d = u.column(k).dot(&u.column(j));
                let ck = u.column(k).clone_owned();
                u.column_mut(j).axpy(-d, &ck, 1.0);
            }
            let nrm = u.column(j).norm();
            if nrm > 0.0 {
                u.column_mut(j).unscale_mut(nrm);
            }
        }
    }
}

/// Extend the orthonormal columns of `u` to `k` columns with vectors from
/// the orthogonal complement (canonical directions, Gram–Schmidt).
pub fn complete_orthonormal(u: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let m = u.nrows();
    assert!(k <= m, "cannot complete {m}-dimensional basis to {k} columns");
    if u.ncols() >= k {
        return u.columns(0, k).into_owned();
    }
    let mut out = DMatrix::zeros(m, k);
    out.columns_mut(0, u.ncols()).copy_from(u);
    let mut filled = u.ncols();
    for e in 0..m {
        if filled == k {
            break;
        }
        let mut cand = DVector::zeros(m);
        cand[e] = 1.0;
        for _ in 0..2 {
            for c in 0..filled {
                let d = out.column(c).dot(&cand);
                cand.axpy(-d, &out.column(c), 1.0);
            }
        }
        let nrm = cand.norm();
        if nrm > 1e-8 {
            out.column_mut(filled).copy_from(&(cand / nrm));
            filled += 1;
        }
    }
    out
}

/// Least-squares solve `m · x ≈ b` through the SVD pseudo-inverse, dropping
/// singular values below `RANK_TOL * σ_max`.
#[derive(Clone, Debug)]
pub struct PinvSolution {
    pub x: DVector<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

pub fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> PinvSolution {
    assert_eq!(m.nrows(), b.len(), "pinv_solve: row mismatch");
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let mut x = DVector::zeros(m.ncols());
    let mut rank = 0;
    for i in 0..s.len() {
        if smax > 0.0 && s[i] > RANK_TOL * smax {
            rank += 1;
            let coef = u.column(i).dot(b) / s[i];
            x.axpy(coef, &vt.row(i).transpose(), 1.0);
        }
    }
    let mut sv: Vec<f64> = s.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    PinvSolution { x, singular_values: sv, rank }
}

/// `σ_max / σ_min` over all singular values (∞ when rank deficient).
pub fn condition_number(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    let min = singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest absolute deviation of `uᵀu` from the identity.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let g = u.transpose() * u;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
