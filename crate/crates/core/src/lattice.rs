//! Chain operators: R- and K-matrices, the double-row monodromy, the
//! transfer matrix and its analytic constraints.
//!
//! Tensor order: the auxiliary space is the most significant factor and site
//! 1 is the leftmost chain factor, so a basis index of the auxiliary-times-chain
//! space reads `a s_1 s_2 ... s_N` in binary.

use serde::Serialize;

use crate::error::{singular, Result};
use crate::linalg::{kron, lstsq, rel_diff_mat, CMatrix, LeastSquares, C64, I, ONE, ZERO};
use crate::params::{GaugeFrame, ModelInstance};
use crate::poly::{circle_nodes, u_var};

/// A `2^N`-dimensional operator together with the spectral point it was
/// built at.
#[derive(Debug, Clone)]
pub struct ChainOperator {
    pub matrix: CMatrix,
    pub u: C64,
    pub label: &'static str,
}

impl ChainOperator {
    pub fn new(matrix: CMatrix, u: C64, label: &'static str) -> Self {
        Self { matrix, u, label }
    }
}

/// Trigonometric R-matrix on `C^2 (x) C^2`.
pub fn r_matrix(u: C64, q: C64) -> Result<CMatrix> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    Ok(r_matrix_raw(u, q))
}

fn r_matrix_raw(u: C64, q: C64) -> CMatrix {
    let b = |x: C64| (x - x.inv()) / (q - q.inv());
    let (bq, bu) = (b(q * u), b(u));
    CMatrix::from_rows(&[
        vec![bq, ZERO, ZERO, ZERO],
        vec![ZERO, bu, ONE, ZERO],
        vec![ZERO, ONE, bu, ZERO],
        vec![ZERO, ZERO, ZERO, bq],
    ])
}

/// Right reflection matrix.
pub fn k_minus(u: C64, inst: &ModelInstance) -> Result<CMatrix> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    Ok(k_minus_raw(u, inst))
}

fn k_minus_raw(u: C64, inst: &ModelInstance) -> CMatrix {
    let r = &inst.right;
    let c = inst.c(u);
    CMatrix::from_rows(&[
        vec![inst.k_minus(u), r.tau * r.tau * c],
        vec![r.tau_t * r.tau_t * c, inst.k_minus(u.inv())],
    ])
}

/// Left reflection matrix, with its shifted arguments.
pub fn k_plus(u: C64, inst: &ModelInstance) -> Result<CMatrix> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    let l = &inst.left;
    let qu = inst.q * u;
    let c = inst.c(qu);
    Ok(CMatrix::from_rows(&[
        vec![inst.k_plus(qu), l.kappa_t * l.kappa_t * c],
        vec![l.kappa * l.kappa * c, inst.k_plus(qu.inv())],
    ]))
}

/// `T <- T (R acting on aux and site i)`, with `r4` indexed `(a' x', a x)`.
fn right_mul_local(t: &mut CMatrix, r4: &CMatrix, n: usize, site: usize) {
    let dim = t.cols();
    let aux_bit = 1usize << n;
    let site_bit = 1usize << (n - site);
    let rows = t.rows();
    let data = t.as_mut_slice();
    for s0 in 0..dim {
        if s0 & aux_bit != 0 || s0 & site_bit != 0 {
            continue;
        }
        let cols = [s0, s0 | site_bit, s0 | aux_bit, s0 | aux_bit | site_bit];
        for r in 0..rows {
            let row = &mut data[r * dim..(r + 1) * dim];
            let x = [row[cols[0]], row[cols[1]], row[cols[2]], row[cols[3]]];
            for (k, &c) in cols.iter().enumerate() {
                row[c] = (0..4).map(|j| x[j] * r4[(j, k)]).sum();
            }
        }
    }
}

/// `T <- T (K (x) I)` with `K` acting on the auxiliary factor.
fn right_mul_aux(t: &mut CMatrix, k: &CMatrix, n: usize) {
    let dim = t.cols();
    let half = 1usize << n;
    let rows = t.rows();
    let data = t.as_mut_slice();
    for s0 in 0..half {
        for r in 0..rows {
            let row = &mut data[r * dim..(r + 1) * dim];
            let (x0, x1) = (row[s0], row[s0 + half]);
            row[s0] = x0 * k[(0, 0)] + x1 * k[(1, 0)];
            row[s0 + half] = x0 * k[(0, 1)] + x1 * k[(1, 1)];
        }
    }
}

/// Double-row monodromy `K_a(u)` with its four auxiliary blocks.
#[derive(Debug, Clone)]
pub struct Monodromy {
    pub u: C64,
    pub k11: CMatrix,
    pub k12: CMatrix,
    pub k21: CMatrix,
    pub k22: CMatrix,
}

impl Monodromy {
    /// Unchecked assembly of `R_a1(u/v_1)...R_aN(u/v_N) K^- R_aN(u v_N)...R_a1(u v_1)`.
    pub fn new(inst: &ModelInstance, u: C64) -> Self {
        Self::with_k_minus(inst, u, &k_minus_raw(u, inst))
    }

    /// Same product with an arbitrary right reflection matrix.
    pub fn with_k_minus(inst: &ModelInstance, u: C64, km: &CMatrix) -> Self {
        let n = inst.n();
        let d = 1usize << n;
        let mut t = CMatrix::identity(2 * d);
        for (i, &v) in inst.v.iter().enumerate() {
            right_mul_local(&mut t, &r_matrix_raw(u / v, inst.q), n, i + 1);
        }
        right_mul_aux(&mut t, km, n);
        for (i, &v) in inst.v.iter().enumerate().rev() {
            right_mul_local(&mut t, &r_matrix_raw(u * v, inst.q), n, i + 1);
        }
        Self {
            u,
            k11: t.block(0, 0, d, d),
            k12: t.block(0, d, d, d),
            k21: t.block(d, 0, d, d),
            k22: t.block(d, d, d, d),
        }
    }

    /// `sum_ij l_i r_j K_ij`.
    pub fn sandwich(&self, l: [C64; 2], r: [C64; 2]) -> CMatrix {
        let mut out = self.k11.scale(l[0] * r[0]);
        out.axpy(l[0] * r[1], &self.k12);
        out.axpy(l[1] * r[0], &self.k21);
        out.axpy(l[1] * r[1], &self.k22);
        out
    }

    /// `D = K22 - A / b(q u^2)`.
    pub fn d_block(&self, inst: &ModelInstance) -> Result<CMatrix> {
        let bq = inst.b(inst.q * self.u * self.u);
        if bq.norm() <= 1e-10 {
            return Err(singular("b(q u^2)", bq.norm()));
        }
        Ok(&self.k22 - &self.k11.scale(bq.inv()))
    }

    /// `tr_a(K^+ K_a)` from the blocks.
    pub fn transfer(&self, inst: &ModelInstance) -> CMatrix {
        let l = &inst.left;
        let u = self.u;
        let qu = inst.q * u;
        let c = inst.c(qu);
        let mut t = self.k11.scale(inst.k_plus(qu));
        t.axpy(l.kappa_t * l.kappa_t * c, &self.k21);
        t.axpy(l.kappa * l.kappa * c, &self.k12);
        t.axpy(inst.k_plus(qu.inv()), &self.k22);
        t
    }
}

/// The four monodromy operators.
#[derive(Debug, Clone)]
pub struct MonodromyBlocks {
    pub a: ChainOperator,
    pub b: ChainOperator,
    pub c: ChainOperator,
    pub d: ChainOperator,
}

pub fn double_row_monodromy(u: C64, inst: &ModelInstance) -> Result<MonodromyBlocks> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    let m = Monodromy::new(inst, u);
    let d = m.d_block(inst)?;
    Ok(MonodromyBlocks {
        a: ChainOperator::new(m.k11, u, "A"),
        b: ChainOperator::new(m.k12, u, "B"),
        c: ChainOperator::new(m.k21, u, "C"),
        d: ChainOperator::new(d, u, "D"),
    })
}

/// Transfer matrix as the auxiliary trace.
pub fn transfer_matrix(u: C64, inst: &ModelInstance) -> Result<ChainOperator> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    Ok(ChainOperator::new(Monodromy::new(inst, u).transfer(inst), u, "t"))
}

/// Unchecked transfer matrix (dense), for hot loops.
pub fn transfer_raw(u: C64, inst: &ModelInstance) -> CMatrix {
    Monodromy::new(inst, u).transfer(inst)
}

/// Transfer matrix assembled from the operator form in `A, B, C, D`.
pub fn transfer_operator_form(u: C64, inst: &ModelInstance) -> Result<ChainOperator> {
    let blocks = double_row_monodromy(u, inst)?;
    let (q, l) = (inst.q, &inst.left);
    let mut t = blocks.a.matrix.scale(inst.phi(u) * inst.k_plus(u));
    t.axpy(inst.k_plus(inst.cross(u)), &blocks.d.matrix);
    t.axpy(inst.c(q * u) * l.kappa * l.kappa, &blocks.b.matrix);
    t.axpy(inst.c(q * u) * l.kappa_t * l.kappa_t, &blocks.c.matrix);
    Ok(ChainOperator::new(t, u, "t"))
}

/// `D_hat(u, m) = (gamma_{m+1}/gamma_m) <X~(u, m+2)| K(u) |Y(u^-1, m)>`.
pub fn d_hat(u: C64, m: i32, frame: &GaugeFrame, inst: &ModelInstance) -> Result<ChainOperator> {
    let g0 = frame.gamma_checked(m)?;
    frame.gamma_checked(m + 1)?;
    frame.gamma_checked(m - 1)?;
    frame.gamma_checked(m + 3)?;
    let mono = Monodromy::new(inst, u);
    let pre = frame.gamma_m(m + 1) / g0;
    let op = crate::gauge::sandwich_bare_d(&mono, frame, m).scale(pre);
    Ok(ChainOperator::new(op, u, "D_hat"))
}

/// Closed form of `t(1)/Id`.
pub fn t_at_one(inst: &ModelInstance) -> C64 {
    let (q, l, r) = (inst.q, &inst.left, &inst.right);
    (q + q.inv())
        * (r.nu_plus + r.nu_minus)
        * (l.eps_plus + l.eps_minus)
        * inst.v.iter().fold(ONE, |acc, &v| acc * inst.b(q * v) * inst.b(q / v))
}

/// Closed form of `t(i)/Id`.
pub fn t_at_i(inst: &ModelInstance) -> C64 {
    let (q, l, r) = (inst.q, &inst.left, &inst.right);
    (q + q.inv())
        * (r.nu_minus - r.nu_plus)
        * (l.eps_minus - l.eps_plus)
        * inst.v.iter().fold(ONE, |acc, &v| acc * inst.b(I * q * v) * inst.b(I * q / v))
}

/// `kappa_t^2 tau_t^2 + kappa^2 tau^2`, the scaled leading coefficient.
pub fn leading_constant(inst: &ModelInstance) -> C64 {
    let (l, r) = (&inst.left, &inst.right);
    l.kappa_t.powi(2) * r.tau_t.powi(2) + l.kappa.powi(2) * r.tau.powi(2)
}

/// Coefficient of `U^{N+2}` in `t(u)`.
pub fn leading_u_coefficient(inst: &ModelInstance) -> C64 {
    let (q, n) = (inst.q, inst.n() as i32);
    (q + q.inv()).powi(n + 2) / (q - q.inv()).powi(2 * n) * leading_constant(inst)
}

/// Quantum determinant divided by `b(q v^2) b(q v^-2)`: the scalar that
/// `t(q^-1 v) t(v)` must equal.
pub fn sklyanin_rhs(inst: &ModelInstance, v: C64) -> Result<C64> {
    let q = inst.q;
    let den = inst.b(q * v * v) * inst.b(q / (v * v));
    if den.norm() <= 1e-10 {
        return Err(singular("b(q v^2) b(q v^-2)", den.norm()));
    }
    let w = v / q;
    let qw = q * w;
    let cw = inst.cross(w);
    let det = inst.b(w * w)
        * inst.b(q.powi(-4) / (w * w))
        * inst.kt_plus(qw)
        * inst.kt_minus(qw)
        * inst.kt_plus(cw)
        * inst.kt_minus(cw)
        * inst.lambda(qw)
        * inst.lambda(cw);
    Ok(det / den)
}

/// Relative residual of `t(q^-1 v_i) t(v_i) = rhs Id` for site `i` (1-based).
pub fn sklyanin_relation(inst: &ModelInstance, i: usize) -> Result<f64> {
    if i == 0 || i > inst.n() {
        return Err(crate::error::Error::Shape(format!("site {i} outside 1..={}", inst.n())));
    }
    let v = inst.v[i - 1];
    let rhs = sklyanin_rhs(inst, v)?;
    let prod = transfer_raw(v / inst.q, inst).matmul(&transfer_raw(v, inst));
    let target = CMatrix::identity(inst.dim()).scale(rhs);
    Ok(rel_diff_mat(&prod, &target))
}

fn embed_12(r: &CMatrix) -> CMatrix {
    kron(r, &CMatrix::identity(2)).expect("8x8")
}

fn embed_23(r: &CMatrix) -> CMatrix {
    kron(&CMatrix::identity(2), r).expect("8x8")
}

fn swap_23() -> CMatrix {
    let mut p = CMatrix::zeros(8, 8);
    for s in 0..8 {
        let t = (s & 4) | ((s & 1) << 1) | ((s & 2) >> 1);
        p[(t, s)] = ONE;
    }
    p
}

/// `R12(u/v) R13(u/w) R23(v/w) - R23(v/w) R13(u/w) R12(u/v)`, relative.
pub fn yang_baxter_residual(u: C64, v: C64, w: C64, q: C64) -> Result<f64> {
    let (a, b, c) = (r_matrix(u / v, q)?, r_matrix(u / w, q)?, r_matrix(v / w, q)?);
    let p = swap_23();
    let r13 = p.matmul(&embed_12(&b)).matmul(&p);
    let lhs = embed_12(&a).matmul(&r13).matmul(&embed_23(&c));
    let rhs = embed_23(&c).matmul(&r13).matmul(&embed_12(&a));
    Ok(rel_diff_mat(&lhs, &rhs))
}

fn four_term(r1: &CMatrix, k1: &CMatrix, r2: &CMatrix, k2: &CMatrix) -> f64 {
    let id = CMatrix::identity(2);
    let k1 = kron(k1, &id).expect("4x4");
    let k2 = kron(&id, k2).expect("4x4");
    let lhs = r1.matmul(&k1).matmul(r2).matmul(&k2);
    let rhs = k2.matmul(r2).matmul(&k1).matmul(r1);
    rel_diff_mat(&lhs, &rhs)
}

/// Reflection equation for `K^-`, relative residual.
pub fn reflection_residual(u: C64, v: C64, inst: &ModelInstance) -> Result<f64> {
    let q = inst.q;
    Ok(four_term(&r_matrix(u / v, q)?, &k_minus(u, inst)?, &r_matrix(u * v, q)?, &k_minus(v, inst)?))
}

/// Dual reflection equation for `K^+`, relative residual.
pub fn dual_reflection_residual(u: C64, v: C64, inst: &ModelInstance) -> Result<f64> {
    let q = inst.q;
    let r2 = r_matrix((q * q * u * v).inv(), q)?;
    Ok(four_term(&r_matrix(v / u, q)?, &k_plus(u, inst)?, &r2, &k_plus(v, inst)?))
}

/// Residuals of the analytic constraints on `t(u)`.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyticReport {
    pub t_one: f64,
    pub t_i: f64,
    pub leading_extrapolated: f64,
    pub leading_interpolated: f64,
    pub polynomial_holdout: f64,
}

/// Matrix-valued interpolant of `t` in `U`: `coeffs[k]` multiplies `U^k`.
#[derive(Debug, Clone)]
pub struct TransferInterpolant {
    pub coeffs: Vec<CMatrix>,
}

impl TransferInterpolant {
    pub fn eval(&self, u: C64, q: C64) -> CMatrix {
        let x = u_var(u, q);
        let mut acc = CMatrix::zeros(self.coeffs[0].rows(), self.coeffs[0].cols());
        for ck in self.coeffs.iter().rev() {
            acc = &acc.scale(x) + ck;
        }
        acc
    }
}

/// Entrywise interpolation of `t` through `N+3` nodes in `U`.
pub fn interpolate_transfer(inst: &ModelInstance) -> Result<TransferInterpolant> {
    let q = inst.q;
    let deg = inst.n() + 2;
    let nodes = circle_nodes(deg + 1, C64::new(0.0, 0.0), 1.5, 0.3, q);
    let xs: Vec<C64> = nodes.iter().map(|&u| u_var(u, q)).collect();
    let vand = CMatrix::from_fn(deg + 1, deg + 1, |r, c| xs[r].powu(c as u32));
    let ls = LeastSquares::new(&vand)?;
    let ts: Vec<CMatrix> = nodes.iter().map(|&u| transfer_raw(u, inst)).collect();
    let d = inst.dim();
    let mut coeffs = vec![CMatrix::zeros(d, d); deg + 1];
    for idx in 0..d * d {
        let rhs: Vec<C64> = ts.iter().map(|t| t.as_slice()[idx]).collect();
        let sol = ls.solve(&rhs)?;
        for (k, c) in sol.x.iter().enumerate() {
            coeffs[k].as_mut_slice()[idx] = *c;
        }
    }
    Ok(TransferInterpolant { coeffs })
}

pub fn analytic_constraints(inst: &ModelInstance, held_out: &[C64]) -> Result<AnalyticReport> {
    let q = inst.q;
    let n = inst.n() as i32;
    let id = CMatrix::identity(inst.dim());
    let t_one = rel_diff_mat(&transfer_raw(ONE, inst), &id.scale(t_at_one(inst)));
    let t_i = rel_diff_mat(&transfer_raw(I, inst), &id.scale(t_at_i(inst)));

    let scaled = |u: C64| transfer_raw(u, inst).scale((q - q.inv()).powi(2 * n) / (u.powi(4 + 2 * n) * q.powi(2 + n)));
    let direction = C64::from_polar(1.0, 0.4);
    let (u1, u2) = (direction * 1e3, direction * 1e4);
    let (f1, f2) = (scaled(u1), scaled(u2));
    // leading correction is O(u^-2): Richardson with ratio (u2/u1)^2
    let r = (u2 / u1).powi(2);
    let extrapolated = (&f2.scale(r) - &f1).scale((r - 1.0).inv());
    let leading_extrapolated = rel_diff_mat(&extrapolated, &id.scale(leading_constant(inst)));

    let interp = interpolate_transfer(inst)?;
    let top = interp.coeffs.last().expect("nonempty");
    let leading_interpolated = rel_diff_mat(top, &id.scale(leading_u_coefficient(inst)));

    let mut polynomial_holdout: f64 = 0.0;
    for &u in held_out {
        polynomial_holdout = polynomial_holdout.max(rel_diff_mat(&interp.eval(u, q), &transfer_raw(u, inst)));
    }
    Ok(AnalyticReport {
        t_one,
        t_i,
        leading_extrapolated,
        leading_interpolated,
        polynomial_holdout,
    })
}

/// Least-squares scalar `c` minimising `|a - c b|`, and the relative misfit.
pub fn proportionality(a: &[C64], b: &[C64]) -> (C64, f64) {
    let bm = CMatrix::from_fn(b.len(), 1, |r, _| b[r]);
    match lstsq(&bm, a) {
        Ok(sol) => (sol.x[0], sol.residual),
        Err(_) => (ZERO, 1.0),
    }
}
