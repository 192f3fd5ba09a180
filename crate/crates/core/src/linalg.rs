//! Dense row-major matrices, the thin SVD, norms, leverage scores and numeric rank.
//!
//! The SVD is computed as a Householder QR of the tall input followed by a
//! one-sided (Hestenes) Jacobi iteration on the small triangular factor. Every
//! other routine in the crate (regression, embedding diagnostics, leverage
//! sampling) is built on these primitives.

use std::fmt;

use crate::error::{Error, Result};

/// Relative cutoff used for rank decisions throughout the crate.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_JACOBI_SWEEPS: usize = 80;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(12) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 12 {
            writeln!(f, "  ...")?;
        }
        Ok(())
    }
}

fn check_finite(rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(p) if cols > 0 => Err(Error::NonFinite {
            row: p / cols,
            col: p % cols,
        }),
        Some(_) => Err(Error::NonFinite { row: rows, col: 0 }),
        None => Ok(()),
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        check_finite(rows, cols, &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// An `n x 1` matrix holding `v`.
    pub fn column_vector(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), 1, v.to_vec())
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        check_finite(n, n, &m.data)?;
        Ok(m)
    }

    /// Wraps a buffer produced by crate-internal arithmetic on finite inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Panics on a non-finite value, which would break the type's invariant.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(v.is_finite(), "non-finite value {v} written at ({i}, {j})");
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self' * other`, accumulated row by row without forming the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch(format!(
                "cannot form A'B for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (p, q) = (self.cols, other.cols);
        let mut out = vec![0.0; p * q];
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &bv) in out[i * q..(i + 1) * q].iter_mut().zip(b) {
                    *d += a * bv;
                }
            }
        }
        Ok(Self::from_raw(p, q, out))
    }

    /// `A'A`.
    pub fn gram(&self) -> DenseMatrix {
        let c = self.cols;
        let mut out = vec![0.0; c * c];
        for k in 0..self.rows {
            let r = self.row(k);
            for i in 0..c {
                let a = r[i];
                if a == 0.0 {
                    continue;
                }
                for j in i..c {
                    out[i * c + j] += a * r[j];
                }
            }
        }
        for i in 0..c {
            for j in 0..i {
                out[i * c + j] = out[j * c + i];
            }
        }
        Self::from_raw(c, c, out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimMismatch(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self' * v`.
    pub fn t_mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimMismatch(format!(
                "vector of length {} against {} rows",
                v.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimMismatch(format!(
                "{:?} minus {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch(format!(
                "hstack of {} and {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self::from_raw(self.rows, cols, data))
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.cols, data)
    }

    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Self::from_raw(self.rows, idx.len(), data)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(singular_values(self)?.first().copied().unwrap_or(0.0))
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm2(self.row(i))).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.frobenius_norm()
}

pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    a.spectral_norm()
}

/// Thin SVD `A = U diag(s) V'` of a tall matrix.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `n x k` with orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    /// `k x k` orthogonal.
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DenseMatrix {
        let k = self.singular_values.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate().take(k) {
                let v = us.get(i, j) * s;
                us.data[i * k + j] = v;
            }
        }
        us.matmul(&self.v.transpose()).expect("conformable by construction")
    }

    pub fn smallest(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn largest(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Errors if `sigma_min < rel_tol * sigma_max`.
    pub fn check_rank(&self, rel_tol: f64) -> Result<()> {
        let largest = self.largest();
        for (index, &value) in self.singular_values.iter().enumerate() {
            if largest == 0.0 || value < rel_tol * largest {
                return Err(Error::RankDeficient {
                    index,
                    value,
                    largest,
                });
            }
        }
        Ok(())
    }
}

/// Householder QR of a tall matrix. Returns the thin `Q` (`n x k`) and `R` (`k x k`).
fn householder_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (n, k) = a.shape();
    // Work column-major: reflectors operate on columns.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.column(j)).collect();
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    for j in 0..k {
        let x = &cols[j][j..];
        let alpha = norm2(x);
        let mut v = x.to_vec();
        let beta = if alpha == 0.0 {
            0.0
        } else {
            let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
            v[0] += sign * alpha;
            let vnorm2 = dot(&v, &v);
            if vnorm2 == 0.0 { 0.0 } else { 2.0 / vnorm2 }
        };
        if beta != 0.0 {
            for c in cols.iter_mut().skip(j) {
                let tail = &mut c[j..];
                let s = beta * dot(&v, tail);
                for (t, vi) in tail.iter_mut().zip(&v) {
                    *t -= s * vi;
                }
            }
        }
        vs.push(v);
        betas.push(beta);
    }
    let mut r = DenseMatrix::zeros(k, k);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..=j {
            r.data[i * k + j] = c[i];
        }
    }
    // Q = H_0 H_1 ... H_{k-1} [I_k; 0], applied right to left.
    let mut q_cols: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for j in (0..k).rev() {
        let beta = betas[j];
        if beta == 0.0 {
            continue;
        }
        let v = &vs[j];
        for c in q_cols.iter_mut() {
            let tail = &mut c[j..];
            let s = beta * dot(v, tail);
            if s != 0.0 {
                for (t, vi) in tail.iter_mut().zip(v) {
                    *t -= s * vi;
                }
            }
        }
    }
    let mut q = DenseMatrix::zeros(n, k);
    for (j, c) in q_cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.data[i * k + j] = v;
        }
    }
    (q, r)
}

/// One-sided Jacobi SVD of a small square matrix, `w = u diag(s) v'`.
fn jacobi_svd_square(r: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let k = r.cols();
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..k).map(|j| r.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = 1e-15;
    let mut converged = k < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for vecs in [&mut w, &mut v] {
                    let (lo, hi) = vecs.split_at_mut(q);
                    for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (x, y) = (*a, *b);
                        *a = c * x - s * y;
                        *b = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(MAX_JACOBI_SWEEPS));
    }
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = smax * 1e-13;

    // Left vectors; columns attached to (numerically) zero singular values are
    // completed to an orthonormal basis by Gram-Schmidt.
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sigma[slot] > cutoff && sigma[slot] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma[slot]).collect());
        } else {
            u_cols.push(vec![0.0; k]);
            pending.push(slot);
        }
    }
    for &slot in &pending {
        for e in 0..k {
            let mut cand = vec![0.0; k];
            cand[e] = 1.0;
            for (other_slot, other) in u_cols.iter().enumerate() {
                if other_slot == slot || (pending.contains(&other_slot) && other_slot > slot) {
                    continue;
                }
                let proj = dot(&cand, other);
                for (c, o) in cand.iter_mut().zip(other) {
                    *c -= proj * o;
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-6 {
                u_cols[slot] = cand.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
    let mut u = DenseMatrix::zeros(k, k);
    let mut vm = DenseMatrix::zeros(k, k);
    for (slot, &j) in order.iter().enumerate() {
        for i in 0..k {
            u.data[i * k + slot] = u_cols[slot][i];
            vm.data[i * k + slot] = v[j][i];
        }
    }
    Ok((u, sigma, vm))
}

/// Thin SVD of a matrix with `rows >= cols`.
pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    let (n, k) = a.shape();
    if n < k {
        return Err(Error::InvalidDims(format!(
            "svd needs rows >= cols, got {n}x{k}"
        )));
    }
    let (q, r) = householder_qr(a);
    let (ur, s, v) = jacobi_svd_square(&r)?;
    let u = q.matmul(&ur)?;
    Ok(SvdFactors {
        u,
        singular_values: s,
        v,
    })
}

/// Singular values of any matrix, nonincreasing; length `min(rows, cols)`.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(Vec::new());
    }
    if a.rows() >= a.cols() {
        let (_, r) = householder_qr(a);
        Ok(jacobi_svd_square(&r)?.1)
    } else {
        let t = a.transpose();
        let (_, r) = householder_qr(&t);
        Ok(jacobi_svd_square(&r)?.1)
    }
}

/// Number of singular values at or above `rel_tol * sigma_1`. A zero matrix has rank 0.
pub fn numeric_rank(a: &DenseMatrix, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let largest = s.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v >= rel_tol * largest).count())
}

#[derive(Clone, Debug)]
pub struct LeverageProfile {
    pub scores: Vec<f64>,
    pub coherence: f64,
    /// `scores / cols`, the importance-sampling distribution.
    pub probabilities: Vec<f64>,
}

/// Row leverage scores `||U_(i)||^2` from the exact thin SVD.
pub fn leverage_scores(a: &DenseMatrix) -> Result<LeverageProfile> {
    let f = svd(a)?;
    f.check_rank(DEFAULT_RANK_TOL)?;
    Ok(leverage_from_u(&f.u))
}

pub(crate) fn leverage_from_u(u: &DenseMatrix) -> LeverageProfile {
    let d = u.cols() as f64;
    let scores: Vec<f64> = (0..u.rows()).map(|i| dot(u.row(i), u.row(i))).collect();
    let coherence = scores.iter().copied().fold(0.0, f64::max);
    let probabilities = scores.iter().map(|l| l / d).collect();
    LeverageProfile {
        scores,
        coherence,
        probabilities,
    }
}

/// `V diag(1/s^2) V'`, i.e. `(A'A)^{-1}` from the SVD of `A`.
pub(crate) fn inverse_gram_from_svd(f: &SvdFactors) -> DenseMatrix {
    let k = f.singular_values.len();
    let mut out = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            for (l, s) in f.singular_values.iter().enumerate() {
                acc += f.v.get(i, l) * f.v.get(j, l) / (s * s);
            }
            out.data[i * k + j] = acc;
        }
    }
    out
}

/// Solves the symmetric positive definite system `M x = b` by Cholesky.
/// Returns `None` when a pivot falls below `1e-12` of the largest diagonal entry.
pub(crate) fn solve_spd(m: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = m.rows();
    let floor = 1e-12 * (0..n).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= floor {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for p in 0..i {
            y[i] -= l[i * n + p] * y[p];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            y[i] -= l[p * n + i] * y[p];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// `c' M c`.
pub(crate) fn quad_form(m: &DenseMatrix, c: &[f64]) -> f64 {
    let mc = m.mat_vec(c).expect("square and conformable");
    dot(c, &mc)
}
