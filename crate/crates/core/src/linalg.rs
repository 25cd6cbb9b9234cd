//! Dense row-major `f64` matrices and the Cholesky-based kernels used by the
//! determinantal diversity losses.
//!
//! Everything here is hand-written and sized for feature layers of a few
//! hundred units; the cubic kernels are naive on purpose.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry precondition of [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Dense row-major matrix of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from a row-major buffer, rejecting length mismatches
    /// and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    /// Element-wise `self + k * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix, k: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {}x{} to {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute element-wise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest |a_ij - a_ji| and its position, for square matrices.
    pub fn asymmetry(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = (self[(i, j)] - self[(j, i)]).abs();
                if d > worst.0 || d.is_nan() {
                    worst = (d, i, j);
                }
            }
        }
        worst
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
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "matmul of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let out = matmul_unchecked(a, b);
    if !out.is_finite() {
        return Err(Error::NonFinite("matmul"));
    }
    Ok(out)
}

// i-k-j loop order; each output entry accumulates over k in increasing order,
// so results are bitwise equal to the textbook triple loop.
pub(crate) fn matmul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, p) = (a.rows, b.cols);
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let out_row = &mut out[i * p..(i + 1) * p];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Matrix::from_raw(n, p, out)
}

/// `aᵀ * b` without materialising the transpose.
pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows, b.rows);
    let (n, p) = (a.cols, b.cols);
    let mut out = vec![0.0; n * p];
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            for (o, &bkj) in out[i * p..(i + 1) * p].iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    Matrix::from_raw(n, p, out)
}

/// `a * bᵀ` without materialising the transpose.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.cols);
    Matrix::from_fn(a.rows, b.rows, |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    })
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S + jitter I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// `ln det(S + jitter I) = 2 Σ ln L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<f64>()
    }

    /// `det(S + jitter I) = Π L_ii²`.
    pub fn det(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.lower[(i, i)] * self.lower[(i, i)])
            .product()
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        matmul_nt(&self.lower, &self.lower)
    }

    /// `(S + jitter I)⁻¹` via `L Y = I` then `Lᵀ X = Y`.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let l = &self.lower;

        // Forward solve; Y = L⁻¹ is lower triangular, so column j starts at row j.
        let mut y = Matrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let mut acc = if i == j { 1.0 } else { 0.0 };
                for k in j..i {
                    acc -= l[(i, k)] * y[(k, j)];
                }
                y[(i, j)] = acc / l[(i, i)];
            }
        }

        // Backward solve against Lᵀ.
        let mut x = Matrix::zeros(n, n);
        for j in 0..n {
            for i in (0..n).rev() {
                let mut acc = y[(i, j)];
                for k in (i + 1)..n {
                    acc -= l[(k, i)] * x[(k, j)];
                }
                x[(i, j)] = acc / l[(i, i)];
            }
        }
        x
    }
}

/// Cholesky factorisation of `s + jitter I`.
///
/// Fails with [`Error::NotSymmetric`] when `s` deviates from symmetry by more
/// than [`SYMMETRY_TOL`], and with [`Error::NotPositiveDefinite`] on the first
/// non-positive pivot, which callers treat as a request to raise the jitter.
pub fn cholesky(s: &Matrix, jitter: f64) -> Result<CholeskyFactor> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be finite and >= 0, got {jitter}"
        )));
    }
    let (diff, row, col) = s.asymmetry();
    if diff.is_nan() || diff > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { row, col, diff });
    }

    let n = s.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = s[(j, j)] + jitter;
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot.is_nan() || pivot <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            // Lower triangle of s only; symmetry was checked above.
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / d;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// `ln det(s + jitter I)` through the Cholesky factor.
pub fn logdet_psd(s: &Matrix, jitter: f64) -> Result<f64> {
    Ok(cholesky(s, jitter)?.logdet())
}

/// How [`det_psd`] treats a failed factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetMode {
    /// Propagate `NotPositiveDefinite`.
    #[default]
    Strict,
    /// With zero jitter, report `det = 0` for inputs that are PSD within
    /// tolerance but singular (for example two identical rows).
    Tolerant,
}

/// `det(s + jitter I) = Π L_ii²`.
pub fn det_psd(s: &Matrix, jitter: f64, mode: DetMode) -> Result<f64> {
    match cholesky(s, jitter) {
        Ok(f) => Ok(f.det()),
        Err(Error::NotPositiveDefinite { row, pivot })
            if mode == DetMode::Tolerant && jitter == 0.0 =>
        {
            let scale = (0..s.rows).fold(1.0_f64, |m, i| m.max(s[(i, i)].abs()));
            match cholesky(s, psd_probe_jitter(s.rows) * scale) {
                Ok(_) => Ok(0.0),
                Err(_) => Err(Error::NotPositiveDefinite { row, pivot }),
            }
        }
        Err(e) => Err(e),
    }
}

// Diagonal shift under which a PSD-within-rounding matrix must factor.
fn psd_probe_jitter(n: usize) -> f64 {
    1e-10 * (n.max(1) as f64)
}

/// `(s + jitter I)⁻¹` through two triangular solves.
pub fn inverse_psd(s: &Matrix, jitter: f64) -> Result<Matrix> {
    let inv = cholesky(s, jitter)?.inverse();
    if !inv.is_finite() {
        return Err(Error::NonFinite("inverse_psd"));
    }
    Ok(inv)
}

/// Factorises `s + jitter I`, multiplying the jitter by 10 after each
/// `NotPositiveDefinite` failure, at most `retries` times. Returns the factor
/// and the jitter that succeeded.
pub fn cholesky_escalating(s: &Matrix, jitter: f64, retries: usize) -> Result<(CholeskyFactor, f64)> {
    let mut eps = jitter;
    let mut attempt = 0;
    loop {
        match cholesky(s, eps) {
            Ok(f) => return Ok((f, eps)),
            Err(Error::NotPositiveDefinite { .. }) if attempt < retries => {
                attempt += 1;
                eps *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
}
