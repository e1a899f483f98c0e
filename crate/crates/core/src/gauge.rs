//! Gauge vectors, the dynamical operators built from them and the gauged
//! forms of the transfer matrix.

use serde::Serialize;

use crate::error::{singular, Result};
use crate::functions::FramePair;
use crate::lattice::{transfer_raw, ChainOperator, Monodromy};
use crate::linalg::{rel_diff_mat, CMatrix, C64, ONE};
use crate::params::{GaugeFrame, ModelInstance};

/// Covariant `|X(u, m)>`.
pub fn x_vec(f: &GaugeFrame, u: C64, m: i32) -> [C64; 2] {
    [f.alpha * f.q.powi(-m) / u, ONE]
}

/// Covariant `|Y(u, m)>`.
pub fn y_vec(f: &GaugeFrame, u: C64, m: i32) -> [C64; 2] {
    [f.beta * f.q.powi(m) / u, ONE]
}

/// Contravariant `<X~(u, m)|`.
pub fn xt_vec(f: &GaugeFrame, u: C64, m: i32) -> [C64; 2] {
    let pre = f.q * u / f.gamma_m(m - 1);
    [-pre, pre * f.alpha * f.q.powi(-m) / u]
}

/// Contravariant `<Y~(u, m)|`.
pub fn yt_vec(f: &GaugeFrame, u: C64, m: i32) -> [C64; 2] {
    let pre = f.q * u / f.gamma_m(m + 1);
    [pre, -pre * f.beta * f.q.powi(m) / u]
}

fn dot2(a: [C64; 2], b: [C64; 2]) -> C64 {
    a[0] * b[0] + a[1] * b[1]
}

/// The four gauge vectors at one point with their defining relations.
#[derive(Debug, Clone, Serialize)]
pub struct GaugeVectorPair {
    pub x: [C64; 2],
    pub y: [C64; 2],
    pub xt: [C64; 2],
    pub yt: [C64; 2],
    pub frame: GaugeFrame,
}

impl GaugeVectorPair {
    pub fn new(frame: &GaugeFrame, u: C64, m: i32) -> Self {
        Self {
            x: x_vec(frame, u, m),
            y: y_vec(frame, u, m),
            xt: xt_vec(frame, u, m),
            yt: yt_vec(frame, u, m),
            frame: *frame,
        }
    }
}

/// Largest deviation among orthogonality, normalisation and closure at `(u, m)`.
pub fn gauge_vector_residual(frame: &GaugeFrame, u: C64, m: i32) -> f64 {
    let p = GaugeVectorPair::new(frame, u, m);
    let orth = dot2(p.xt, p.x).norm().max(dot2(p.yt, p.y).norm());
    let n1 = (dot2(xt_vec(frame, u, m + 1), y_vec(frame, u, m - 1)) - ONE).norm();
    let n2 = (dot2(yt_vec(frame, u, m - 1), x_vec(frame, u, m + 1)) - ONE).norm();
    let (y, xt) = (y_vec(frame, u, m - 1), xt_vec(frame, u, m + 1));
    let (x, yt) = (x_vec(frame, u, m + 1), yt_vec(frame, u, m - 1));
    let mut closure: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { ONE } else { C64::new(0.0, 0.0) };
            closure = closure.max((y[i] * xt[j] + x[i] * yt[j] - id).norm());
        }
    }
    orth.max(n1).max(n2).max(closure)
}

/// `<X~(u, m+2)| K(u) |Y(u^-1, m)>`, the dressing operator without prefactor.
pub fn sandwich_bare_d(mono: &Monodromy, f: &GaugeFrame, m: i32) -> CMatrix {
    let u = mono.u;
    mono.sandwich(xt_vec(f, u, m + 2), y_vec(f, u.inv(), m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DynOp {
    A,
    B,
    C,
    D,
}

/// Dynamical operators at one spectral point, sharing the monodromy.
#[derive(Debug, Clone)]
pub struct Dynamical<'a> {
    pub inst: &'a ModelInstance,
    pub frame: GaugeFrame,
    pub mono: Monodromy,
}

impl<'a> Dynamical<'a> {
    pub fn new(inst: &'a ModelInstance, frame: &GaugeFrame, u: C64) -> Self {
        Self {
            inst,
            frame: *frame,
            mono: Monodromy::new(inst, u),
        }
    }

    pub fn u(&self) -> C64 {
        self.mono.u
    }

    pub fn a(&self, m: i32) -> CMatrix {
        let (f, u) = (&self.frame, self.u());
        self.mono.sandwich(yt_vec(f, u, m - 2), x_vec(f, u.inv(), m))
    }

    pub fn b(&self, m: i32) -> CMatrix {
        let (f, u) = (&self.frame, self.u());
        self.mono.sandwich(yt_vec(f, u, m), y_vec(f, u.inv(), m))
    }

    pub fn c(&self, m: i32) -> CMatrix {
        let (f, u) = (&self.frame, self.u());
        self.mono.sandwich(xt_vec(f, u, m), x_vec(f, u.inv(), m))
    }

    pub fn d_bare(&self, m: i32) -> CMatrix {
        sandwich_bare_d(&self.mono, &self.frame, m)
    }

    pub fn d_hat(&self, m: i32) -> CMatrix {
        let f = &self.frame;
        self.d_bare(m).scale(f.gamma_m(m + 1) / f.gamma_m(m))
    }

    pub fn d(&self, m: i32) -> Result<CMatrix> {
        let (f, u, inst) = (&self.frame, self.u(), self.inst);
        let bq = inst.b(inst.q * u * u);
        if bq.norm() <= 1e-10 {
            return Err(singular("b(q u^2)", bq.norm()));
        }
        let coef = f.gamma((u * u).inv(), m + 1) / (bq * f.gamma_m(m));
        Ok(&self.d_hat(m) - &self.a(m).scale(coef))
    }

    /// `t_d(u, m) = a~(u, m) A + d~(u, m) D`.
    pub fn t_diag(&self, m: i32) -> Result<CMatrix> {
        let (f, u, inst) = (&self.frame, self.u(), self.inst);
        let mut t = self.a(m).scale(f.a_tilde_m(inst, u, m));
        t.axpy(f.d_tilde_m(inst, u, m), &self.d(m)?);
        Ok(t)
    }

    /// Full reassembly `t_d + u^-1 c(qu) (zeta B - zeta~ C)`.
    pub fn t_reassembled(&self, m: i32) -> Result<CMatrix> {
        let (f, u, inst) = (&self.frame, self.u(), self.inst);
        let mut t = self.t_diag(m)?;
        let pre = inst.c(inst.q * u) / u;
        t.axpy(pre * f.zeta(inst, m), &self.b(m));
        t.axpy(-pre * f.zeta_t(inst, m), &self.c(m));
        Ok(t)
    }

    /// `a~(u) A + d~(u) D`, the modified-diagonal form with frame-free
    /// coefficients.
    pub fn t_modified(&self, m: i32) -> Result<CMatrix> {
        let (u, inst) = (self.u(), self.inst);
        let mut t = self.a(m).scale(inst.a_tilde(u));
        t.axpy(inst.d_tilde(u), &self.d(m)?);
        Ok(t)
    }
}

fn frame_window_check(frame: &GaugeFrame, m: i32) -> Result<()> {
    for k in [m - 3, m - 1, m, m + 1, m + 3] {
        frame.gamma_checked(k)?;
    }
    Ok(())
}

pub fn dynamical_op(name: DynOp, u: C64, m: i32, frame: &GaugeFrame, inst: &ModelInstance) -> Result<ChainOperator> {
    if u.norm() <= 1e-10 {
        return Err(singular("u", u.norm()));
    }
    frame_window_check(frame, m)?;
    let dy = Dynamical::new(inst, frame, u);
    let (mat, label) = match name {
        DynOp::A => (dy.a(m), "A_dyn"),
        DynOp::B => (dy.b(m), "B_dyn"),
        DynOp::C => (dy.c(m), "C_dyn"),
        DynOp::D => (dy.d(m)?, "D_dyn"),
    };
    Ok(ChainOperator::new(mat, u, label))
}

/// Gauged transfer matrix and how well it reassembles `t(u)`.
#[derive(Debug, Clone)]
pub struct GaugedTransfer {
    pub t_d: ChainOperator,
    pub zeta: C64,
    pub zeta_t: C64,
    pub residual: f64,
}

pub fn gauged_transfer(u: C64, m: i32, frame: &GaugeFrame, inst: &ModelInstance) -> Result<GaugedTransfer> {
    frame_window_check(frame, m)?;
    let dy = Dynamical::new(inst, frame, u);
    let t_d = dy.t_diag(m)?;
    let full = dy.t_reassembled(m)?;
    let residual = rel_diff_mat(&full, &transfer_raw(u, inst));
    Ok(GaugedTransfer {
        t_d: ChainOperator::new(t_d, u, "t_d"),
        zeta: frame.zeta(inst, m),
        zeta_t: frame.zeta_t(inst, m),
        residual,
    })
}

/// Relative distance of `t(u)` from the modified-diagonal form in the dl
/// frame at level `m0 + 2M`, where both off-diagonal coefficients vanish.
pub fn modified_diagonal_residual(u: C64, m0: i32, m_len: usize, inst: &ModelInstance) -> Result<f64> {
    let dl = inst.gauge_dl(m0, m_len)?;
    let dy = Dynamical::new(inst, &dl, u);
    let m = m0 + 2 * m_len as i32;
    Ok(rel_diff_mat(&dy.t_modified(m)?, &transfer_raw(u, inst)))
}

fn rel_pair(lhs: &CMatrix, rhs: &CMatrix) -> f64 {
    rel_diff_mat(lhs, rhs)
}

/// Residuals of the `BB`, `AB` and `DB` exchange relations at `(u, v, m)`.
pub fn check_commutation(u: C64, v: C64, m: i32, frame: &GaugeFrame, inst: &ModelInstance) -> Result<[f64; 3]> {
    let q = inst.q;
    for (name, d) in [
        ("b(u/v)", inst.b(u / v)),
        ("b(v/u)", inst.b(v / u)),
        ("b(q u v)", inst.b(q * u * v)),
        ("b(q u^2)", inst.b(q * u * u)),
        ("b(q v^2)", inst.b(q * v * v)),
    ] {
        if d.norm() <= 1e-10 {
            return Err(singular(name, d.norm()));
        }
    }
    frame_window_check(frame, m)?;
    frame.gamma_checked(m + 2)?;
    let du = Dynamical::new(inst, frame, u);
    let dv = Dynamical::new(inst, frame, v);
    let bb_l = du.b(m + 2).matmul(&dv.b(m));
    let bb_r = dv.b(m + 2).matmul(&du.b(m));

    let bv = dv.b(m);
    let bu = du.b(m);
    let ab_l = du.a(m + 2).matmul(&bv);
    let mut ab_r = bv.matmul(&du.a(m)).scale(inst.f2(u, v));
    ab_r.axpy(frame.g_dyn(inst, u, v, m), &bu.matmul(&dv.a(m)));
    ab_r.axpy(frame.w_dyn(inst, u, v, m), &bu.matmul(&dv.d(m)?));

    let db_l = du.d(m + 2)?.matmul(&bv);
    let mut db_r = bv.matmul(&du.d(m)?).scale(inst.h2(u, v));
    db_r.axpy(frame.k_dyn(inst, u, v, m), &bu.matmul(&dv.d(m)?));
    db_r.axpy(frame.n_dyn(inst, u, v, m), &bu.matmul(&dv.a(m)));

    Ok([rel_pair(&bb_l, &bb_r), rel_pair(&ab_l, &ab_r), rel_pair(&db_l, &db_r)])
}

/// Residuals of the dr/dl linear relations for `A` and `D`, frames built at
/// `m0` with dl strings of length `m_len`.
pub fn check_linear_relations(
    u: C64,
    p: i32,
    m: i32,
    m0: i32,
    m_len: usize,
    inst: &ModelInstance,
) -> Result<(f64, f64)> {
    let pair = FramePair::new(inst, m0, m_len)?;
    let bpm = pair.b_pm_checked(p, m)?;
    let cpm = pair.c_pm_checked(p, m)?;
    let ddr = Dynamical::new(inst, &pair.dr, u);
    let ddl = Dynamical {
        inst,
        frame: pair.dl,
        mono: ddr.mono.clone(),
    };
    let cdr = ddr.c(m);
    let bdl = ddl.b(p - 2);
    let mut rhs_a = ddr.a(m);
    rhs_a.axpy(cpm, &cdr);
    rhs_a.axpy(bpm, &bdl);
    let phi = inst.phi(u);
    let mut rhs_d = ddr.d(m)?;
    rhs_d.axpy(-phi * cpm, &cdr);
    rhs_d.axpy(-phi * bpm, &bdl);
    Ok((rel_pair(&ddl.a(p), &rhs_a), rel_pair(&ddl.d(p)?, &rhs_d)))
}

/// `kron` of 2-vectors in site order, site 1 leftmost.
pub fn tensor_vectors(vs: &[[C64; 2]]) -> Vec<C64> {
    vs.iter().fold(vec![ONE], |acc, v| crate::linalg::kron_vec(&acc, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::random_point;
    use crate::params::sample_generic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (ModelInstance, ChaCha8Rng) {
        (sample_generic(seed, n).unwrap(), ChaCha8Rng::seed_from_u64(seed ^ 0xabc))
    }

    #[test]
    fn gauge_vectors_on_grid() {
        let (inst, mut rng) = setup(2, 1);
        let frames = [
            inst.gauge_dr(0).unwrap(),
            inst.gauge_dl(0, 2).unwrap(),
            inst.gauge_generic(C64::new(0.4, 0.9), C64::new(1.2, -0.3), 0).unwrap(),
        ];
        for f in &frames {
            for _ in 0..5 {
                let u = random_point(&mut rng);
                for m in -2..3 {
                    assert!(gauge_vector_residual(f, u, m) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn decomposition_in_three_frames() {
        let (inst, mut rng) = setup(2, 2);
        let u = random_point(&mut rng);
        let frames = [
            inst.gauge_dr(0).unwrap(),
            inst.gauge_dl(0, 2).unwrap(),
            inst.gauge_generic(C64::new(-0.6, 0.5), C64::new(0.8, 0.8), 0).unwrap(),
        ];
        for f in &frames {
            for m in [0, 1, 3] {
                assert!(gauged_transfer(u, m, f, &inst).unwrap().residual <= 1e-11);
            }
        }
    }

    #[test]
    fn dl_zetas_vanish_and_modified_form_holds() {
        let (inst, mut rng) = setup(2, 3);
        let u = random_point(&mut rng);
        for m_len in 0..=2 {
            let dl = inst.gauge_dl(0, m_len).unwrap();
            let m = 2 * m_len as i32;
            assert!(dl.zeta(&inst, m).norm() < 1e-13);
            assert!(dl.zeta_t(&inst, m).norm() < 1e-13);
            assert!(modified_diagonal_residual(u, 0, m_len, &inst).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn a_tilde_m_definition() {
        let (inst, mut rng) = setup(1, 4);
        let f = inst.gauge_dr(0).unwrap();
        let u = random_point(&mut rng);
        let m = 2;
        let lhs = f.a_tilde_m(&inst, u, m) - inst.a_tilde(u)
            + f.delta(&inst, m) * inst.phi(inst.cross(u)) * inst.c(inst.q * u) / u;
        assert!(lhs.norm() < 1e-12);
    }

    #[test]
    fn exchange_relations() {
        let (inst, mut rng) = setup(2, 5);
        let f = inst.gauge_dl(0, 2).unwrap();
        let (u, v) = (random_point(&mut rng), random_point(&mut rng));
        for m in [-2, 0, 1] {
            let r = check_commutation(u, v, m, &f, &inst).unwrap();
            assert!(r.iter().all(|&x| x <= 1e-11), "{r:?}");
        }
    }

    #[test]
    fn exchange_near_coincidence() {
        let (inst, mut rng) = setup(2, 6);
        let f = inst.gauge_dl(0, 2).unwrap();
        let u = random_point(&mut rng);
        let v = u + C64::new(1e-6, 0.0);
        let r = check_commutation(u, v, 0, &f, &inst).unwrap();
        assert!(r.iter().all(|&x| x <= 1e-5), "{r:?}");
    }

    #[test]
    fn linear_relations() {
        let (inst, mut rng) = setup(2, 7);
        let u = random_point(&mut rng);
        for (p, m) in [(0, 0), (1, 0), (2, 1), (0, 3)] {
            let (a, d) = check_linear_relations(u, p, m, 0, 2, &inst).unwrap();
            assert!(a <= 1e-10 && d <= 1e-10, "{p} {m}: {a:e} {d:e}");
        }
    }

    #[test]
    fn d_hat_consistency() {
        let (inst, mut rng) = setup(2, 8);
        let f = inst.gauge_dl(0, 2).unwrap();
        let u = random_point(&mut rng);
        let m = 1;
        let dh = crate::lattice::d_hat(u, m, &f, &inst).unwrap().matrix;
        let dy = Dynamical::new(&inst, &f, u);
        let coef = f.gamma((u * u).inv(), m + 1) / (inst.b(inst.q * u * u) * f.gamma_m(m));
        let mut rebuilt = dy.d(m).unwrap();
        rebuilt.axpy(coef, &dy.a(m));
        assert!(rel_diff_mat(&dh, &rebuilt) < 1e-12);
    }
}
