//! Dense complex linear algebra used by every equalizer.
//!
//! Everything here is a pure function of its inputs. Matrix inverses are
//! never formed: `(·)^{-1}·B` is always a Hermitian positive-definite solve
//! through a Cholesky factor, and singular values come from a one-sided
//! Jacobi SVD so results are reproducible bit-for-bit on a given platform.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use thiserror::Error;

/// Relative ridge added on a failed factorization, as a fraction of the mean
/// diagonal entry.
pub const RIDGE_EPS: f64 = 1e-12;

/// Relative asymmetry tolerated by [`hpd_solve`] and [`Cholesky::factor`].
pub const HERMITIAN_TOL: f64 = 1e-10;

static RIDGE_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of factorizations that needed the ridge retry since process start.
pub fn ridge_events() -> u64 {
    RIDGE_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix is not Hermitian (asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("rank {rank} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange { rank: usize, rows: usize, cols: usize },
    #[error("non-finite entry encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows of `(re, im)` pairs.
    pub fn from_rows(rows: &[Vec<(f64, f64)>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().map(|&(re, im)| Complex64::new(re, im)));
        }
        Self { rows: r, cols: c, data }
    }

    /// Real diagonal matrix.
    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> CMatrix {
        CMatrix::from_fn(self.rows, 1, |i, _| self[(i, j)])
    }

    /// Copies rows `start..start+count`.
    pub fn row_block(&self, start: usize, count: usize) -> CMatrix {
        assert!(start + count <= self.rows, "row block out of range");
        CMatrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    /// Copies columns `start..start+count`.
    pub fn col_block(&self, start: usize, count: usize) -> CMatrix {
        assert!(start + count <= self.cols, "column block out of range");
        CMatrix::from_fn(self.rows, count, |i, j| self[(i, start + j)])
    }

    /// Copies the `(r0.., c0..)` submatrix of the given size.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> CMatrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        CMatrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &CMatrix) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols, "block out of range");
        for i in 0..src.rows {
            for j in 0..src.cols {
                self[(r0 + i, c0 + j)] = src[(i, j)];
            }
        }
    }

    /// Conjugate transpose.
    pub fn h(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_c(&self, s: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diag(&self, s: f64) -> CMatrix {
        assert!(self.is_square(), "add_diag needs a square matrix");
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)].re += s;
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest `|a_ij - conj(a_ji)|`. Infinite for non-square input.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermitian_defect() <= tol * self.max_abs().max(1.0)
    }

    /// Stacks matrices vertically. All parts must share a column count.
    pub fn vstack(parts: &[&CMatrix]) -> CMatrix {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        CMatrix { rows, cols, data }
    }

    /// Concatenates matrices horizontally. All parts must share a row count.
    pub fn hstack(parts: &[&CMatrix]) -> CMatrix {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = CMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hstack row mismatch");
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        out
    }

    pub fn blkdiag(parts: &[&CMatrix]) -> CMatrix {
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = CMatrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            out.set_block(r0, c0, p);
            r0 += p.rows;
            c0 += p.cols;
        }
        out
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn check_same(op: &'static str, a: &CMatrix, b: &CMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch { op, lhs: a.shape(), rhs: b.shape() });
    }
    Ok(())
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.cols != b.rows {
        return Err(NumericsError::ShapeMismatch { op: "matmul", lhs: a.shape(), rhs: b.shape() });
    }
    let mut out = CMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a^H · b` without materializing the transpose.
pub fn matmul_hn(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.rows != b.rows {
        return Err(NumericsError::ShapeMismatch { op: "matmul_hn", lhs: a.shape(), rhs: b.shape() });
    }
    let mut out = CMatrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, aki) in arow.iter().enumerate() {
            let c = aki.conj();
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += c * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · b^H` without materializing the transpose.
pub fn matmul_nh(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.cols != b.cols {
        return Err(NumericsError::ShapeMismatch { op: "matmul_nh", lhs: a.shape(), rhs: b.shape() });
    }
    let mut out = CMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y.conj();
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

pub fn add(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same("add", a, b)?;
    Ok(CMatrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

pub fn sub(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same("sub", a, b)?;
    Ok(CMatrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    })
}

pub fn scale(a: &CMatrix, s: f64) -> CMatrix {
    a.scale(s)
}

pub fn conj_transpose(a: &CMatrix) -> CMatrix {
    a.h()
}

pub fn frob_norm(a: &CMatrix) -> f64 {
    a.frob_norm()
}

/// `(A + A^H) / 2`.
pub fn hermitize(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare(a.rows, a.cols));
    }
    Ok(CMatrix::from_fn(a.rows, a.cols, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5))
}

// Operator forms panic on shape mismatch; use the free functions when shapes
// come from untrusted input.

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        matmul(self, rhs).expect("matmul shape mismatch")
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        add(self, rhs).expect("add shape mismatch")
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        sub(self, rhs).expect("sub shape mismatch")
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale(-1.0)
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "add_assign shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&rhs.data) {
            *x += y;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "sub_assign shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&rhs.data) {
            *x -= y;
        }
    }
}

/// Lower-triangular Cholesky factor `A = L L^H` of a Hermitian PD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
    ridged: bool,
}

impl Cholesky {
    /// Factors `a`, retrying once with `a + RIDGE_EPS·tr(a)/n·I` if the
    /// plain factorization hits a non-positive pivot.
    pub fn factor(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(NumericsError::NotSquare(a.rows, a.cols));
        }
        if !a.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        let defect = a.hermitian_defect();
        if defect > HERMITIAN_TOL * a.max_abs().max(1.0) {
            return Err(NumericsError::NotHermitian { asymmetry: defect });
        }
        match cholesky_lower(a) {
            Ok(l) => Ok(Self { l, ridged: false }),
            Err(_) => {
                let n = a.rows.max(1) as f64;
                let ridge = RIDGE_EPS * a.trace().re.abs() / n;
                RIDGE_EVENTS.fetch_add(1, Ordering::Relaxed);
                let l = cholesky_lower(&a.add_diag(ridge))?;
                Ok(Self { l, ridged: true })
            }
        }
    }

    /// Factors without the ridge retry.
    pub fn factor_strict(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(NumericsError::NotSquare(a.rows, a.cols));
        }
        let defect = a.hermitian_defect();
        if defect > HERMITIAN_TOL * a.max_abs().max(1.0) {
            return Err(NumericsError::NotHermitian { asymmetry: defect });
        }
        Ok(Self { l: cholesky_lower(a)?, ridged: false })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn lower(&self) -> &CMatrix {
        &self.l
    }

    /// True when the ridge retry was needed.
    pub fn ridged(&self) -> bool {
        self.ridged
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(NumericsError::ShapeMismatch { op: "cholesky_solve", lhs: self.l.shape(), rhs: b.shape() });
        }
        let m = b.cols;
        let l = &self.l;
        let mut x = b.clone();
        // L Y = B
        for i in 0..n {
            for k in 0..i {
                let lik = l[(i, k)];
                if lik.re == 0.0 && lik.im == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= lik * v;
                }
            }
            let d = l[(i, i)].re;
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        // L^H X = Y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = l[(k, i)].conj();
                if lki.re == 0.0 && lki.im == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= lki * v;
                }
            }
            let d = l[(i, i)].re;
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        Ok(x)
    }

    /// Solves `X A = B` for Hermitian `A`, i.e. `X = B A^{-1}`.
    pub fn solve_right(&self, b: &CMatrix) -> Result<CMatrix> {
        Ok(self.solve(&b.h())?.h())
    }
}

fn cholesky_lower(a: &CMatrix) -> Result<CMatrix> {
    let n = a.rows;
    let mut l = CMatrix::zeros(n, n);
    // Pivots at rounding level relative to the diagonal mean numerical singularity.
    let floor = f64::EPSILON * n as f64 * (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn hpd_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.rows != b.rows {
        return Err(NumericsError::ShapeMismatch { op: "hpd_solve", lhs: a.shape(), rhs: b.shape() });
    }
    Cholesky::factor(a)?.solve(b)
}

/// True when every eigenvalue of Hermitian `a` is at least `-tol`.
pub fn is_psd(a: &CMatrix, tol: f64) -> Result<bool> {
    let h = hermitize(a)?;
    Ok(cholesky_lower(&h.add_diag(tol.max(f64::MIN_POSITIVE))).is_ok())
}

/// Smallest eigenvalue of a Hermitian matrix.
///
/// Shifts by `s = ‖A‖_F` so that `A + sI` is PSD; its smallest singular value
/// is then `λ_min + s`.
pub fn hermitian_min_eigenvalue(a: &CMatrix) -> Result<f64> {
    let h = hermitize(a)?;
    let s = h.frob_norm();
    let svd = svd(&h.add_diag(s))?;
    Ok(svd.s.last().copied().unwrap_or(0.0) - s)
}

/// Thin singular value decomposition `X = U·diag(S)·V^H`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl SvdResult {
    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> SvdResult {
        SvdResult {
            u: self.u.col_block(0, r),
            s: self.s[..r].to_vec(),
            v: self.v.col_block(0, r),
        }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U·diag(S)`.
    pub fn us(&self) -> CMatrix {
        let mut out = self.u.clone();
        for i in 0..out.rows {
            for (j, s) in self.s.iter().enumerate() {
                out[(i, j)] *= *s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> CMatrix {
        matmul_nh(&self.us(), &self.v).expect("svd factor shapes")
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Full thin SVD: `U` is `m×k`, `V` is `n×k` with `k = min(m, n)`.
///
/// One-sided Jacobi. Singular values are sorted non-increasing and the first
/// nonzero entry of every left singular vector is made real and positive.
pub fn svd(x: &CMatrix) -> Result<SvdResult> {
    if !x.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Ok(SvdResult { u: CMatrix::zeros(m, 0), s: vec![], v: CMatrix::zeros(n, 0) });
    }
    let mut out = if m >= n {
        jacobi_tall(x)
    } else {
        let t = jacobi_tall(&x.h());
        SvdResult { u: t.v, s: t.s, v: t.u }
    };
    normalize_phases(&mut out);
    Ok(out)
}

/// Leading `r` singular triplets of `x`.
pub fn truncated_svd(x: &CMatrix, r: usize) -> Result<SvdResult> {
    let (m, n) = x.shape();
    if r == 0 || r > m.min(n) {
        return Err(NumericsError::RankOutOfRange { rank: r, rows: m, cols: n });
    }
    Ok(svd(x)?.truncate(r))
}

// Columns of `a` (m×n, m ≥ n) are rotated until mutually orthogonal.
fn jacobi_tall(x: &CMatrix) -> SvdResult {
    let (m, n) = x.shape();
    // column-major working copies
    let mut a: Vec<Vec<Complex64>> = (0..n).map(|j| (0..m).map(|i| x[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<Complex64>> = (0..n)
        .map(|j| (0..n).map(|i| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
        .collect();
    let tol = 1e-15;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = a[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: Complex64 = a[p].iter().zip(&a[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // rotate column q by the phase of gamma so the pair is real
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for cols in [&mut a, &mut v] {
                    let (lo, hi) = cols.split_at_mut(q);
                    let cp = &mut lo[p];
                    let cq = &mut hi[0];
                    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
                        let yq = *xq * phase;
                        let np = *xp * c - yq * s;
                        let nq = *xp * s + yq * c;
                        *xp = np;
                        *xq = nq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let smax = norms[order[0]];
    let floor = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut u = CMatrix::zeros(m, n);
    let mut vv = CMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut filled = vec![false; n];
    for (k, &j) in order.iter().enumerate() {
        let sj = norms[j];
        s.push(sj);
        for i in 0..n {
            vv[(i, k)] = v[j][i];
        }
        if sj > floor && sj > 0.0 {
            for i in 0..m {
                u[(i, k)] = a[j][i] / sj;
            }
            filled[k] = true;
        }
    }
    complete_orthonormal(&mut u, &filled);
    SvdResult { u, s, v: vv }
}

// Replaces unfilled columns with unit vectors orthogonal to the rest.
fn complete_orthonormal(u: &mut CMatrix, filled: &[bool]) {
    let m = u.rows;
    let mut candidate = 0;
    for k in 0..u.cols {
        if filled[k] {
            continue;
        }
        loop {
            assert!(candidate < m, "cannot complete orthonormal basis");
            let mut w = vec![Complex64::new(0.0, 0.0); m];
            w[candidate] = Complex64::new(1.0, 0.0);
            candidate += 1;
            for _ in 0..2 {
                for j in 0..u.cols {
                    if !(filled[j] || j < k) {
                        continue;
                    }
                    let dot: Complex64 = (0..m).map(|i| u[(i, j)].conj() * w[i]).sum();
                    for (i, wi) in w.iter_mut().enumerate() {
                        *wi -= u[(i, j)] * dot;
                    }
                }
            }
            let nrm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nrm > 1e-6 {
                for (i, wi) in w.iter().enumerate() {
                    u[(i, k)] = wi / nrm;
                }
                break;
            }
        }
    }
}

fn normalize_phases(svd: &mut SvdResult) {
    let (m, k) = svd.u.shape();
    for j in 0..k {
        let pivot = (0..m).map(|i| svd.u[(i, j)]).find(|z| z.norm() > 1e-12);
        if let Some(z) = pivot {
            let ph = (z / z.norm()).conj();
            for i in 0..m {
                svd.u[(i, j)] *= ph;
            }
            for i in 0..svd.v.rows {
                svd.v[(i, j)] *= ph;
            }
        }
    }
}
