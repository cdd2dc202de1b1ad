//! Dense small-matrix numerics used outside the differentiation graph.
//!
//! Everything here is value-in/value-out on row-major `f64` matrices:
//! one-sided Jacobi SVD, real nonsymmetric eigenvalues (balance,
//! Hessenberg reduction, Francis double-shift QR), LU inversion and
//! determinants, and Householder QR for orthogonal initialization.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Largest dimension accepted by the decompositions.
pub const MAX_DIM: usize = 256;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 60;
const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of arithmetic on valid matrices.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(matmul_unchecked(self, other))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Integer power by repeated squaring.
    pub fn pow(&self, mut exp: u32) -> Result<Matrix> {
        require_square(self)?;
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        while exp > 0 {
            if exp & 1 == 1 {
                result = matmul_unchecked(&result, &base);
            }
            exp >>= 1;
            if exp > 0 {
                base = matmul_unchecked(&base, &base);
            }
        }
        Ok(result)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

pub(crate) fn matmul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Matrix::from_raw(n, m, out)
}

/// `a bᵀ` without forming the transpose.
pub(crate) fn matmul_nt(a: &[f64], b: &Matrix, n: usize) -> Matrix {
    let (k, m) = (b.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Matrix::from_raw(n, m, out)
}

/// `aᵀ b` without forming the transpose.
pub(crate) fn matmul_tn(a: &Matrix, b: &[f64], m: usize) -> Matrix {
    let (n, k) = (a.rows, a.cols);
    let mut out = vec![0.0; k * m];
    for p in 0..n {
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..k {
            let api = a.data[p * k + i];
            if api == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Matrix::from_raw(k, m, out)
}

fn require_square(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    if a.rows > MAX_DIM {
        return Err(LinalgError::Dimension(format!(
            "matrix dimension {} exceeds the supported maximum {MAX_DIM}",
            a.rows
        )));
    }
    Ok(())
}

fn require_finite(a: &Matrix) -> Result<()> {
    match a.data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(LinalgError::NonFinite {
            row: i / a.cols,
            col: i % a.cols,
        }),
        None => Ok(()),
    }
}

/// `u · diag(sigma) · vᵀ`, singular values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
    /// Jacobi sweeps used until convergence.
    pub sweeps: usize,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let us = scale_columns(&self.u, &self.sigma);
        matmul_unchecked(&us, &self.v.transpose())
    }
}

fn scale_columns(a: &Matrix, s: &[f64]) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows {
        for (c, &sc) in s.iter().enumerate() {
            out[(r, c)] *= sc;
        }
    }
    out
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
///
/// Column pairs of a working copy are rotated until mutually orthogonal;
/// the accumulated rotations form `v`, the column norms are the singular
/// values and the normalized columns form `u`. Columns belonging to zero
/// singular values are completed to an orthonormal basis.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    require_square(a)?;
    require_finite(a)?;
    let n = a.rows;
    // Column-major working storage: cols[j] is column j.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut sweeps = 0;
    let mut converged = n < 2;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = column_products(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::NoConvergence(format!(
            "one-sided Jacobi did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in column order, so the output is deterministic.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let rank_tol = scale * (n as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        v_cols.push(v[j].clone());
        if s > rank_tol && s > 0.0 {
            sigma.push(s);
            u_cols.push(w[j].iter().map(|x| x / s).collect());
        } else {
            sigma.push(0.0);
            u_cols.push(vec![0.0; n]);
            deficient.push(k);
        }
    }
    if !deficient.is_empty() {
        complete_basis(&mut u_cols, &deficient);
    }

    // Sign convention: the largest-magnitude entry of every right singular
    // vector is positive; the compensating sign goes into u.
    for k in 0..n {
        let pivot =
            v_cols[k]
                .iter()
                .cloned()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v_cols[k].iter_mut().for_each(|x| *x = -*x);
            u_cols[k].iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(SvdResult {
        u: from_columns(&u_cols),
        sigma,
        v: from_columns(&v_cols),
        sweeps,
    })
}

fn column_products(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    let n = cols.len();
    let mut candidate = 0;
    for &k in missing {
        loop {
            let mut e = vec![0.0; n];
            e[candidate % n] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if j == k || (missing.contains(&j) && col.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let d: f64 = col.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(col).for_each(|(x, c)| *x -= d * c);
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols[k] = e.iter().map(|x| x / norm).collect();
                break;
            }
            if candidate > 2 * n {
                break;
            }
        }
    }
}

fn from_columns(cols: &[Vec<f64>]) -> Matrix {
    let n = cols[0].len();
    let m = cols.len();
    let mut out = Matrix::zeros(n, m);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    out
}

/// A complex number as a `(re, im)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex>,
}

impl Spectrum {
    pub fn sum(&self) -> Complex {
        self.eigenvalues
            .iter()
            .fold(Complex::new(0.0, 0.0), |a, z| {
                Complex::new(a.re + z.re, a.im + z.im)
            })
    }

    pub fn product(&self) -> Complex {
        self.eigenvalues
            .iter()
            .fold(Complex::new(1.0, 0.0), |a, &z| a.mul(z))
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.abs()).collect()
    }

    /// `max_i | |λ_i| - 1 |`.
    pub fn unit_circle_deviation(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| (z.abs() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues of a real square matrix.
///
/// Complex eigenvalues come out as adjacent conjugate pairs, positive
/// imaginary part first.
pub fn eigenvalues(a: &Matrix) -> Result<Spectrum> {
    require_square(a)?;
    require_finite(a)?;
    let n = a.rows;
    let mut h: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
    balance(&mut h);
    hessenberg(&mut h);
    let eigenvalues = hqr(&mut h)?;
    Ok(Spectrum { eigenvalues })
}

/// Parlett–Reinsch balancing by powers of two.
fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] > 0.0 {
            -alpha_norm
        } else {
            alpha_norm
        };
        let mut v = vec![0.0; n];
        v[k + 1] = a[k + 1][k] - alpha;
        for i in k + 2..n {
            v[i] = a[i][k];
        }
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        // A <- H A
        for j in 0..n {
            let d: f64 = (k + 1..n).map(|i| v[i] * a[i][j]).sum::<f64>() * 2.0 / vnorm_sq;
            for i in k + 1..n {
                a[i][j] -= d * v[i];
            }
        }
        // A <- A H
        for row in a.iter_mut() {
            let d: f64 = (k + 1..n).map(|j| row[j] * v[j]).sum::<f64>() * 2.0 / vnorm_sq;
            for j in k + 1..n {
                row[j] -= d * v[j];
            }
        }
        for i in k + 2..n {
            a[i][k] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<Complex>> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let eps = f64::EPSILON;
    let max_iterations = 100 * n.max(1);

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }

    let mut total_iterations = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nnu = nn as usize;
            // Look for a small subdiagonal element.
            let mut l = nnu;
            while l > 0 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= eps * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nnu][nnu];
            if l == nnu {
                wr[nnu] = x + t;
                wi[nnu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[nnu - 1][nnu - 1];
            let mut w = a[nnu][nnu - 1] * a[nnu - 1][nnu];
            if l == nnu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nnu - 1] = x + z;
                    wr[nnu] = if z != 0.0 { x - w / z } else { x + z };
                    wi[nnu - 1] = 0.0;
                    wi[nnu] = 0.0;
                } else {
                    wr[nnu - 1] = x + p;
                    wr[nnu] = x + p;
                    wi[nnu - 1] = z;
                    wi[nnu] = -z;
                }
                nn -= 2;
                break;
            }
            if total_iterations >= max_iterations {
                return Err(LinalgError::NoConvergence(format!(
                    "shifted QR exceeded {max_iterations} iterations with {} eigenvalues unresolved \
                     (active block rows {l}..={nnu})",
                    nnu + 1
                )));
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nnu + 1) {
                    row[i] -= x;
                }
                let s = a[nnu][nnu - 1].abs() + a[nnu - 1][nnu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_iterations += 1;

            // Form shift and look for two consecutive small subdiagonals.
            let mut m = nnu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nnu - 1 {
                a[i + 2][i] = 0.0;
                if i != m {
                    a[i + 2][i - 1] = 0.0;
                }
            }
            // Double QR step on rows l..nn and columns m..nn.
            let mut k = m;
            while k < nnu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k + 1 != nnu { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nnu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k + 1 != nnu {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = nnu.min(k + 3);
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x * row[k] + y * row[k + 1];
                        if k + 1 != nnu {
                            pp += z * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex::new(re, im))
        .collect())
}

/// `‖AᵀA − I‖_F`.
pub fn orthogonality_defect(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "orthogonality defect needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let ata = matmul_unchecked(&a.transpose(), a);
    Ok(ata.sub(&Matrix::identity(a.rows))?.frobenius_norm())
}

struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

fn lu_decompose(a: &Matrix) -> Lu {
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular = false;
    for k in 0..n {
        let (piv, maxv) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if maxv == 0.0 {
            singular = true;
            continue;
        }
        if piv != k {
            for c in 0..n {
                lu.data.swap(k * n + c, piv * n + c);
            }
            perm.swap(k, piv);
            sign = -sign;
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            if f != 0.0 {
                for c in k + 1..n {
                    lu[(i, c)] -= f * lu[(k, c)];
                }
            }
        }
    }
    Lu {
        lu,
        perm,
        sign,
        singular,
    }
}

pub fn determinant(a: &Matrix) -> Result<f64> {
    require_square(a)?;
    require_finite(a)?;
    let lu = lu_decompose(a);
    if lu.singular {
        return Ok(0.0);
    }
    Ok(lu.lu.diag().iter().product::<f64>() * lu.sign)
}

fn one_norm(a: &Matrix) -> f64 {
    (0..a.cols)
        .map(|c| (0..a.rows).map(|r| a[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse by LU with partial pivoting. Fails when the 1-norm condition
/// number exceeds `1e12`.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    require_square(a)?;
    require_finite(a)?;
    let n = a.rows;
    let lu = lu_decompose(a);
    if lu.singular {
        return Err(LinalgError::Singular {
            condition: f64::INFINITY,
        });
    }
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        // Solve L U x = P e_col.
        let mut x: Vec<f64> = lu
            .perm
            .iter()
            .map(|&p| if p == col { 1.0 } else { 0.0 })
            .collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| lu.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| lu.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / lu.lu[(i, i)];
        }
        for (r, v) in x.into_iter().enumerate() {
            inv[(r, col)] = v;
        }
    }
    let condition = one_norm(a) * one_norm(&inv);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(LinalgError::Singular { condition });
    }
    Ok(inv)
}

/// Orthogonal factor of a Householder QR, with signs fixed so that `R`
/// has a nonnegative diagonal.
pub fn qr_orthogonal(a: &Matrix) -> Result<Matrix> {
    require_square(a)?;
    require_finite(a)?;
    let n = a.rows;
    let mut r = a.clone();
    let mut q = Matrix::identity(n);
    for k in 0..n.saturating_sub(1) {
        let norm: f64 = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k] = r[(k, k)] - alpha;
        for i in k + 1..n {
            v[i] = r[(i, k)];
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for j in 0..n {
            let d: f64 = (k..n).map(|i| v[i] * r[(i, j)]).sum::<f64>() * 2.0 / vv;
            for i in k..n {
                r[(i, j)] -= d * v[i];
            }
        }
        // Q <- Q H
        for i in 0..n {
            let d: f64 = (k..n).map(|j| q[(i, j)] * v[j]).sum::<f64>() * 2.0 / vv;
            for j in k..n {
                q[(i, j)] -= d * v[j];
            }
        }
    }
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for i in 0..n {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok(q)
}
