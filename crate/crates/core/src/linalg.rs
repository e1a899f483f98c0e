//! Dense complex linear algebra: matrices, Kronecker products, LU, least
//! squares and singular values.
//!
//! Matrices are stored row-major. Every residual in the crate is measured in
//! the Frobenius norm.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest matrix dimension any constructor will produce.
pub const MAX_DIM: usize = 1 << 12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4e}{:+.4e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from row-major entries. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entries length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|row| {
            assert_eq!(row.len(), c, "ragged rows");
            row.iter().copied()
        });
        Self::from_vec(r, c, data.collect())
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &CMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "mat-vec shape mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Covector-times-matrix, `w^T A` (no conjugation).
    pub fn left_mul_vec(&self, w: &[C64]) -> Vec<C64> {
        assert_eq!(self.rows, w.len(), "vec-mat shape mismatch");
        let mut out = vec![ZERO; self.cols];
        for (r, &wr) in w.iter().enumerate() {
            if wr == ZERO {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += wr * a;
            }
        }
        out
    }

    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Sub-block `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> CMatrix {
        CMatrix::from_fn(nr, nc, |r, c| self[(r0 + r, c0 + c)])
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: C64) -> CMatrix {
        self.scale(rhs)
    }
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Bilinear pairing `sum a_i b_i` (no conjugation).
pub fn pair(a: &[C64], b: &[C64]) -> C64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hermitian inner product `sum conj(a_i) b_i`.
pub fn vdot(a: &[C64], b: &[C64]) -> C64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn sub_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale_vec(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

/// `acc += s * v`
pub fn axpy_vec(acc: &mut [C64], s: C64, v: &[C64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Tensor product of two vectors, first factor outermost.
pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

/// Relative distance between `a` and `b` with respect to the larger norm.
pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        return 0.0;
    }
    norm(&sub_vec(a, b)) / scale
}

pub fn rel_diff_mat(a: &CMatrix, b: &CMatrix) -> f64 {
    rel_diff(a.as_slice(), b.as_slice())
}

/// Symmetric relative residual `|a - b| / (|a| + |b| + 1)` for scalars.
pub fn sym_rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / (a.norm() + b.norm() + 1.0)
}

/// Standard tensor product; dimensions multiply.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    if rows > MAX_DIM || cols > MAX_DIM {
        return Err(Error::Size {
            dim: rows.max(cols),
            max: MAX_DIM,
        });
    }
    Ok(CMatrix::from_fn(rows, cols, |r, c| {
        a[(r / b.rows, c / b.cols)] * b[(r % b.rows, c % b.cols)]
    }))
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, _) = (k..n)
                .map(|r| (r, lu[(r, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if p != k {
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            if pivot == ZERO {
                continue;
            }
            for r in k + 1..n {
                let f = lu[(r, k)] / pivot;
                lu[(r, k)] = f;
                if f == ZERO {
                    continue;
                }
                for c in k + 1..n {
                    let u = lu[(k, c)];
                    lu[(r, c)] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn determinant(&self) -> C64 {
        let n = self.lu.rows;
        (0..n).fold(C64::new(self.sign, 0.0), |acc, i| acc * self.lu[(i, i)])
    }

    /// Ratio of smallest to largest pivot modulus, a cheap conditioning proxy.
    pub fn pivot_ratio(&self) -> f64 {
        let n = self.lu.rows;
        let mods: Vec<f64> = (0..n).map(|i| self.lu[(i, i)].norm()).collect();
        let max = mods.iter().cloned().fold(0.0, f64::max);
        let min = mods.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(Error::Shape(format!("rhs length {} != {}", b.len(), n)));
        }
        if self.pivot_ratio() < 1e-15 {
            return Err(Error::RankDeficient(format!(
                "LU pivot ratio {:e}",
                self.pivot_ratio()
            )));
        }
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }
}

/// Determinant via pivoted LU.
pub fn determinant(a: &CMatrix) -> Result<C64> {
    Ok(Lu::new(a)?.determinant())
}

pub fn solve(a: &CMatrix, b: &[C64]) -> Result<Vec<C64>> {
    Lu::new(a)?.solve(b)
}

/// Householder QR of a tall matrix, reusable for several right-hand sides.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    rows: usize,
    cols: usize,
    // Householder vectors (column k stored below and on the diagonal) and R.
    qr: CMatrix,
    betas: Vec<C64>,
    r_diag: Vec<C64>,
}

/// Least-squares solution together with the relative residual `|Ax-b|/|b|`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<C64>,
    pub residual: f64,
}

impl LeastSquares {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let (m, n) = (a.rows, a.cols);
        if m < n {
            return Err(Error::Shape(format!("least squares needs rows >= cols, got {m}x{n}")));
        }
        let mut qr = a.clone();
        let mut betas = vec![ZERO; n];
        let mut r_diag = vec![ZERO; n];
        for k in 0..n {
            let alpha_norm = (k..m).map(|r| qr[(r, k)].norm_sqr()).sum::<f64>().sqrt();
            if alpha_norm == 0.0 {
                return Err(Error::RankDeficient(format!("column {k} is zero")));
            }
            let x0 = qr[(k, k)];
            let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
            let alpha = -phase * alpha_norm;
            // v = x - alpha e1, stored in place; beta = 2 / (v^H v)
            qr[(k, k)] = x0 - alpha;
            let vnorm2: f64 = (k..m).map(|r| qr[(r, k)].norm_sqr()).sum();
            let beta = C64::new(2.0 / vnorm2, 0.0);
            for c in k + 1..n {
                let s: C64 = (k..m).map(|r| qr[(r, k)].conj() * qr[(r, c)]).sum();
                let s = s * beta;
                for r in k..m {
                    let vr = qr[(r, k)];
                    qr[(r, c)] -= s * vr;
                }
            }
            betas[k] = beta;
            r_diag[k] = alpha;
        }
        let max = r_diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let min = r_diag.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if min <= 1e-14 * max {
            return Err(Error::RankDeficient(format!(
                "least-squares R diagonal ratio {:e}",
                min / max
            )));
        }
        Ok(Self {
            rows: m,
            cols: n,
            qr,
            betas,
            r_diag,
        })
    }

    /// Ratio of smallest to largest |R_kk|.
    pub fn diag_ratio(&self) -> f64 {
        let max = self.r_diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let min = self.r_diag.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        min / max
    }

    pub fn solve(&self, b: &[C64]) -> Result<LstsqSolution> {
        let (m, n) = (self.rows, self.cols);
        if b.len() != m {
            return Err(Error::Shape(format!("rhs length {} != {}", b.len(), m)));
        }
        let mut y = b.to_vec();
        for k in 0..n {
            let s: C64 = (k..m).map(|r| self.qr[(r, k)].conj() * y[r]).sum();
            let s = s * self.betas[k];
            for r in k..m {
                y[r] -= s * self.qr[(r, k)];
            }
        }
        let mut x = vec![ZERO; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.qr[(i, j)] * x[j];
            }
            x[i] = s / self.r_diag[i];
        }
        let tail = norm(&y[n..]);
        let bn = norm(b);
        let residual = if bn == 0.0 { tail } else { tail / bn };
        Ok(LstsqSolution { x, residual })
    }
}

pub fn lstsq(a: &CMatrix, b: &[C64]) -> Result<LstsqSolution> {
    LeastSquares::new(a)?.solve(b)
}

/// Singular values (descending) by one-sided Jacobi rotations.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    // Work on columns of A (or A^H when wide).
    let work = if a.rows >= a.cols { a.clone() } else { a.adjoint() };
    let (m, n) = (work.rows, work.cols);
    let mut cols: Vec<Vec<C64>> = (0..n).map(|c| work.column(c)).collect();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = vdot(&cols[p], &cols[q]);
                if gamma.norm() == 0.0 {
                    continue;
                }
                off = off.max(gamma.norm() / (alpha * beta).sqrt());
                // Rotate to annihilate gamma: diagonalise [[alpha, g],[g*, beta]].
                let phase = gamma / gamma.norm();
                let zeta = (beta - alpha) / (2.0 * gamma.norm());
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let xp = cols[p][i];
                    let xq = cols[q][i];
                    cols[p][i] = xp * c - xq * phase.conj() * s;
                    cols[q][i] = xp * phase * s + xq * c;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}
