//! Dense matrix kernel backing the subspace metrics.
//!
//! Small and self-contained: a row-major f64 matrix plus a one-sided
//! (Hestenes) Jacobi SVD. The one-sided variant orthogonalizes column
//! pairs in place, which keeps the implementation short and accurate for
//! the matrix sizes this toolkit sees (d up to ~1,024).

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iteration.
const MAX_SWEEPS: usize = 60;
/// Relative off-diagonal tolerance: a column pair counts as orthogonal when
/// |a_i . a_j| <= TOL * |a_i| * |a_j|.
const JACOBI_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Builds from a flat row-major slice.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`, naive triple loop in ikj order.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `self^T * self`, exploiting symmetry.
    pub fn gram(&self) -> Mat {
        let d = self.cols;
        let mut out = Mat::zeros(d, d);
        for row in self.data.chunks_exact(d) {
            for j in 0..d {
                let rj = row[j];
                if rj == 0.0 {
                    continue;
                }
                for k in j..d {
                    out.data[j * d + k] += rj * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                out.data[j * d + k] = out.data[k * d + j];
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "row counts must agree");
        let mut out = Mat::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = &self.data[r * self.cols..(r + 1) * self.cols];
            let b = &other.data[r * other.cols..(r + 1) * other.cols];
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Thin SVD: `m = u * diag(s) * v^T` with `s` non-increasing and
/// orthonormal columns in `u` (p x k) and `v` (q x k), k = min(p, q).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl Svd {
    /// `u * diag(s) * v^T`, for reconstruction checks.
    pub fn reconstruct(&self) -> Mat {
        let k = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                let v = us.get(i, j) * self.s[j];
                us.set(i, j, v);
            }
        }
        us.matmul(&self.v.transpose())
    }
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Mat) -> Result<Svd> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::DimensionMismatch("svd of empty matrix".into()));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch("svd input must be finite".into()));
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        // Work on the transpose and swap the factors back.
        let t = svd_tall(&m.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn svd_tall(m: &Mat) -> Result<Svd> {
    let n = m.rows;
    let k = m.cols;

    // Column-major working copies of A and V, so each rotation touches
    // contiguous memory.
    let mut a = vec![0.0f64; n * k];
    for i in 0..n {
        for j in 0..k {
            a[j * n + i] = m.get(i, j);
        }
    }
    let mut v = vec![0.0f64; k * k];
    for j in 0..k {
        v[j * k + j] = 1.0;
    }

    // Columns below this norm are numerically zero; rotating them against
    // healthy columns keeps churning floating-point noise and stalls the
    // relative convergence criterion, so they are frozen instead. The
    // Frobenius norm is rotation-invariant, so one threshold suffices.
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tiny = frob * 1e-15;

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_rel = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                let (alpha, beta, gamma) = {
                    let cp = &a[p * n..(p + 1) * n];
                    let cq = &a[q * n..(q + 1) * n];
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..n {
                        al += cp[i] * cp[i];
                        be += cq[i] * cq[i];
                        ga += cp[i] * cq[i];
                    }
                    (al, be, ga)
                };
                if alpha.sqrt() <= tiny || beta.sqrt() <= tiny {
                    continue;
                }
                let denom = (alpha * beta).sqrt();
                if gamma.abs() <= JACOBI_TOL * denom {
                    continue;
                }
                max_rel = max_rel.max(gamma.abs() / denom);

                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                rotate_pair(&mut a, n, p, q, c, s);
                rotate_pair(&mut v, k, p, q, c, s);
            }
        }
        if max_rel <= JACOBI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        // Last chance: the final sweep may have reached the threshold.
        if !columns_orthogonal(&a, n, k, tiny) {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
    }

    // Singular values are the column norms; sort descending.
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let mut u = Mat::zeros(n, k);
    let mut vt = Mat::zeros(k, k);
    let mut s = Vec::with_capacity(k);
    let mut null_cols = Vec::new();
    for (new_j, &old_j) in order.iter().enumerate() {
        let sigma = norms[old_j];
        for i in 0..k {
            vt.set(i, new_j, v[old_j * k + i]);
        }
        // Frozen (numerically zero) columns carry a noise direction, not a
        // singular vector; report sigma = 0 and rebuild them orthonormally.
        if sigma > tiny {
            s.push(sigma);
            let col = &a[old_j * n..(old_j + 1) * n];
            for i in 0..n {
                u.set(i, new_j, col[i] / sigma);
            }
        } else {
            s.push(0.0);
            null_cols.push(new_j);
        }
    }
    if !null_cols.is_empty() {
        complete_orthonormal(&mut u, &null_cols);
    }
    Ok(Svd { u, s, v: vt })
}

#[inline]
fn rotate_pair(cols: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q * n);
    let cp = &mut head[p * n..(p + 1) * n];
    let cq = &mut tail[..n];
    for i in 0..n {
        let x = cp[i];
        let y = cq[i];
        cp[i] = c * x - s * y;
        cq[i] = s * x + c * y;
    }
}

fn columns_orthogonal(a: &[f64], n: usize, k: usize, tiny: f64) -> bool {
    for p in 0..k {
        for q in (p + 1)..k {
            let cp = &a[p * n..(p + 1) * n];
            let cq = &a[q * n..(q + 1) * n];
            let mut al = 0.0;
            let mut be = 0.0;
            let mut ga = 0.0;
            for i in 0..n {
                al += cp[i] * cp[i];
                be += cq[i] * cq[i];
                ga += cp[i] * cq[i];
            }
            if al.sqrt() <= tiny || be.sqrt() <= tiny {
                continue;
            }
            let denom = (al * be).sqrt();
            if ga.abs() > JACOBI_TOL * denom * 1e3 {
                return false;
            }
        }
    }
    true
}

/// Fills the listed zero columns of `u` with vectors orthonormal to all
/// non-listed columns, via Gram-Schmidt over standard basis candidates.
fn complete_orthonormal(u: &mut Mat, null_cols: &[usize]) {
    let n = u.rows();
    let k = u.cols();
    let mut filled: Vec<usize> = (0..k).filter(|j| !null_cols.contains(j)).collect();
    for &jz in null_cols {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for cand in 0..n {
            let mut vec: Vec<f64> = (0..n).map(|i| if i == cand { 1.0 } else { 0.0 }).collect();
            for &jf in &filled {
                let dot: f64 = (0..n).map(|i| vec[i] * u.get(i, jf)).sum();
                for (i, item) in vec.iter_mut().enumerate() {
                    *item -= dot * u.get(i, jf);
                }
            }
            let norm: f64 = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = Some(vec);
            }
            if best_norm > 0.5 {
                break;
            }
        }
        let mut vec = best.expect("completion candidate");
        // Second Gram-Schmidt pass for numerical hygiene.
        for &jf in &filled {
            let dot: f64 = (0..n).map(|i| vec[i] * u.get(i, jf)).sum();
            for (i, item) in vec.iter_mut().enumerate() {
                *item -= dot * u.get(i, jf);
            }
        }
        let norm: f64 = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, item) in vec.iter().enumerate() {
            u.set(i, jz, item / norm);
        }
        filled.push(jz);
    }
}

/// Max absolute entry of `m^T m - I`; zero for a perfectly orthogonal matrix.
pub fn orthogonality_defect(m: &Mat) -> f64 {
    let g = m.gram();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - expect).abs());
        }
    }
    worst
}
