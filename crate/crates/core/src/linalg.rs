//! Dense row-major matrices and the handful of kernels the rest of the crate
//! is built on: products, norms, a thin QR, a one-sided Jacobi SVD and a
//! seeded Gaussian source.
//!
//! Every kernel is single-threaded with a fixed reduction order, so results
//! are bit-reproducible for identical inputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Seeded random stream used for every stochastic choice in the crate.
pub type RandomSource = ChaCha8Rng;

const MAX_JACOBI_SWEEPS: usize = 80;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Convenience constructor for literals in tests and examples.
    ///
    /// Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        matmul(self, rhs)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// `self += factor * rhs`.
    pub fn axpy(&mut self, factor: f64, rhs: &Matrix) -> Result<()> {
        self.check_same_shape(rhs, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute element-wise difference; `f64::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(rhs, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    fn check_same_shape(&self, rhs: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = (0..self.cols.min(8))
                .map(|j| format!("{:>10.4e}", self[(i, j)]))
                .collect();
            writeln!(f, "  {}{}", row.join(" "), if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Standard product `a · b`. The inner loop runs over `k` in increasing
/// order for every output entry, which fixes the reduction order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n) = (a.rows, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(Matrix {
        rows: m,
        cols: n,
        data: out,
    })
}

/// `aᵀ · b` without materialising the transpose of `a`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("({}x{})ᵀ times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n) = (a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for k in 0..a.rows {
        let b_row = &b.data[k * n..(k + 1) * n];
        for i in 0..m {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    Ok(Matrix {
        rows: m,
        cols: n,
        data: out,
    })
}

/// `a · bᵀ` without materialising the transpose of `b`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{}x{} times ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
        let ar = &a.data[i * a.cols..(i + 1) * a.cols];
        let br = &b.data[j * b.cols..(j + 1) * b.cols];
        ar.iter().zip(br).map(|(x, y)| x * y).sum()
    }))
}

/// Thin SVD `w = u · diag(sigma) · vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| {
            self.u[(i, j)] * self.sigma[j]
        });
        matmul(&us, &self.vt).expect("svd factors are conformant")
    }
}

/// Thin singular value decomposition by one-sided (Hestenes) Jacobi
/// rotations.
///
/// Singular values come back in descending order. Each column of `u` has its
/// largest-magnitude entry made non-negative (the matching row of `vt` is
/// flipped with it). Left singular vectors for zero singular values are
/// completed to an orthonormal set.
pub fn svd(w: &Matrix) -> Result<SvdResult> {
    if let Some(index) = w.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if w.rows >= w.cols {
        let (u, sigma, v) = jacobi_tall(w)?;
        Ok(finish_svd(u, sigma, v))
    } else {
        // wᵀ = U' Σ V'ᵀ  ⇒  w = V' Σ U'ᵀ
        let (u_t, sigma, v_t) = jacobi_tall(&w.transpose())?;
        Ok(finish_svd(v_t, sigma, u_t))
    }
}

/// Jacobi on a tall (rows ≥ cols) matrix. Returns (U, σ, V) with U rows×cols,
/// V cols×cols, sorted by descending σ.
fn jacobi_tall(w: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = w.shape();
    // Work on columns stored contiguously.
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| w.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON * (m as f64);

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(Error::SvdNonConvergence { iterations: sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha: f64 = g[p].iter().map(|x| x * x).sum();
                let beta: f64 = g[q].iter().map(|x| x * x).sum();
                let gamma: f64 = g[p].iter().zip(&g[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }

    let norms: Vec<f64> = g
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the result deterministic on ties.
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let zero_cut = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &j) in order.iter().enumerate() {
        let col = if sigma[rank] > zero_cut {
            let mut c: Vec<f64> = g[j].iter().map(|x| x / sigma[rank]).collect();
            reorthogonalize(&mut c, &u_cols);
            let nrm = norm(&c);
            if nrm > 0.5 {
                c.iter_mut().for_each(|x| *x /= nrm);
                Some(c)
            } else {
                None
            }
        } else {
            None
        };
        let col = col.unwrap_or_else(|| completion_vector(m, &u_cols));
        u_cols.push(col);
    }
    let sigma: Vec<f64> = sigma
        .into_iter()
        .map(|s| if s > zero_cut { s } else { 0.0 })
        .collect();

    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let v_mat = Matrix::from_fn(n, n, |i, k| v[order[k]][i]);
    Ok((u, sigma, v_mat))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two passes of modified Gram–Schmidt against an orthonormal set.
fn reorthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
}

/// Unit vector orthogonal to `basis`, taken from the standard basis vector
/// with the largest residual.
fn completion_vector(m: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        reorthogonalize(&mut e, basis);
        let nrm = norm(&e);
        if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
            best = Some((nrm, e));
        }
    }
    let (nrm, mut e) = best.expect("m > 0");
    e.iter_mut().for_each(|x| *x /= nrm);
    e
}

fn finish_svd(mut u: Matrix, sigma: Vec<f64>, mut v: Matrix) -> SvdResult {
    for k in 0..u.cols() {
        let mut pivot = 0.0_f64;
        for i in 0..u.rows() {
            if u[(i, k)].abs() > pivot.abs() {
                pivot = u[(i, k)];
            }
        }
        if pivot < 0.0 {
            for i in 0..u.rows() {
                u[(i, k)] = -u[(i, k)];
            }
            for i in 0..v.rows() {
                v[(i, k)] = -v[(i, k)];
            }
        }
    }
    SvdResult {
        u,
        sigma,
        vt: v.transpose(),
    }
}

/// Thin QR of a tall matrix by twice-iterated modified Gram–Schmidt, with
/// the sign of each column of `q` fixed so that `diag(r)` is non-negative.
pub fn qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::shape("qr", format!("{m}x{n} is wider than tall")));
    }
    let mut q_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut v = a.column(j);
        for _ in 0..2 {
            for (i, qi) in q_cols.iter().enumerate() {
                let proj: f64 = v.iter().zip(qi).map(|(x, y)| x * y).sum();
                r[(i, j)] += proj;
                v.iter_mut().zip(qi).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let nrm = norm(&v);
        if nrm <= f64::EPSILON * (m as f64) {
            return Err(Error::Degenerate(format!("qr: column {j} is linearly dependent")));
        }
        r[(j, j)] = nrm;
        v.iter_mut().for_each(|x| *x /= nrm);
        q_cols.push(v);
    }
    Ok((Matrix::from_fn(m, n, |i, k| q_cols[k][i]), r))
}

pub fn seeded_rng(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of indices (splitmix64 finaliser), so that
/// independent components get independent, order-insensitive streams.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Matrix of i.i.d. `N(0, std²)` draws, filled in row-major order.
///
/// Panics if `std` is not a positive finite number.
pub fn gaussian_matrix(rng: &mut RandomSource, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std > 0.0 && std.is_finite(), "std must be positive, got {std}");
    let normal = Normal::new(0.0, std).expect("valid normal parameters");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix { rows, cols, data }
}
