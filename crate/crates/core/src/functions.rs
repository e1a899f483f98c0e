//! Scalar functions, structure constants and the scalar functional
//! identities of the model.
//!
//! The plain methods on [`ModelInstance`] evaluate formulas without any pole
//! checks; the `eval_*` entry points validate the argument first and name the
//! vanishing factor on failure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{singular, Error, Result};
use crate::linalg::{C64, I, ONE};
use crate::params::{GaugeFrame, ModelInstance};
use crate::poly::u_var;

/// Distance to a pole below which evaluation is refused.
pub const POLE_MARGIN: f64 = 1e-10;

/// Fresh random points tried by [`sample_point`].
pub const RESAMPLE_RETRIES: usize = 10;

fn guard(factor: &str, value: C64) -> Result<()> {
    if value.norm() <= POLE_MARGIN || !value.re.is_finite() || !value.im.is_finite() {
        Err(singular(factor, value.norm()))
    } else {
        Ok(())
    }
}

/// Product of `f(u, x)` over the set; 1 for the empty set.
pub fn prod_over(xs: &[C64], mut f: impl FnMut(C64) -> C64) -> C64 {
    xs.iter().fold(ONE, |acc, &x| acc * f(x))
}

/// `xs` with element `i` removed.
pub fn without(xs: &[C64], i: usize) -> Vec<C64> {
    xs.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect()
}

impl ModelInstance {
    pub fn b(&self, u: C64) -> C64 {
        (u - u.inv()) / (self.q - self.q.inv())
    }

    /// `b(x / y)` evaluated through `x - y`, accurate when `x` and `y` nearly
    /// coincide.
    pub fn b_quot(&self, x: C64, y: C64) -> C64 {
        (x - y) * (x + y) / (x * y * (self.q - self.q.inv()))
    }

    pub fn c(&self, u: C64) -> C64 {
        u * u - (u * u).inv()
    }

    pub fn phi(&self, u: C64) -> C64 {
        let q = self.q;
        self.b(q * q * u * u) / self.b(q * u * u)
    }

    pub fn k_minus(&self, u: C64) -> C64 {
        self.right.nu_minus * u + self.right.nu_plus / u
    }

    pub fn k_plus(&self, u: C64) -> C64 {
        self.left.eps_plus * u + self.left.eps_minus / u
    }

    pub fn kt_minus(&self, u: C64) -> C64 {
        let r = &self.right;
        I * r.tau_t * r.tau * (r.mu * u + (r.mu * u).inv()) * (u / r.mu_t + r.mu_t / u)
    }

    pub fn kt_plus(&self, u: C64) -> C64 {
        let l = &self.left;
        I * l.kappa_t * l.kappa * (l.xi_t * u + (l.xi_t * u).inv()) * (u / l.xi + l.xi / u)
    }

    pub fn u_var(&self, u: C64) -> C64 {
        u_var(u, self.q)
    }

    /// Crossing partner `q^-1 u^-1`.
    pub fn cross(&self, u: C64) -> C64 {
        (self.q * u).inv()
    }

    /// Vacuum function `prod_n b(q u / v_n) b(q u v_n)`.
    pub fn lambda(&self, u: C64) -> C64 {
        let q = self.q;
        prod_over(&self.v, |v| self.b(q * u / v) * self.b(q * u * v))
    }

    pub fn lambda_b(&self, u: C64) -> C64 {
        let q = self.q;
        u * self.c(u) * prod_over(&self.v, |v| self.b(q * u / v) * self.b(u * v))
    }

    pub fn lambda_bt(&self, u: C64) -> C64 {
        let q = self.q;
        u * self.c(u) * prod_over(&self.v, |v| self.b(q * u * v) * self.b(u / v))
    }

    pub fn psi(&self, u: C64) -> C64 {
        self.phi(u) * self.kt_plus(u) * self.kt_minus(u) * self.lambda(u)
    }

    pub fn f2(&self, u: C64, v: C64) -> C64 {
        let q = self.q;
        self.b(q * v / u) * self.b(u * v) / (self.b_quot(v, u) * self.b(q * u * v))
    }

    pub fn g2(&self, u: C64, v: C64) -> C64 {
        self.phi(self.cross(v)) / self.b_quot(u, v)
    }

    pub fn w2(&self, u: C64, v: C64) -> C64 {
        -self.b(self.q * u * v).inv()
    }

    pub fn h2(&self, u: C64, v: C64) -> C64 {
        let q = self.q;
        self.b(q * q * u * v) * self.b(q * u / v) / (self.b(q * u * v) * self.b_quot(u, v))
    }

    pub fn k2(&self, u: C64, v: C64) -> C64 {
        self.phi(u) / self.b_quot(v, u)
    }

    pub fn n2(&self, u: C64, v: C64) -> C64 {
        self.phi(u) * self.phi(self.cross(v)) / self.b(self.q * u * v)
    }

    /// `G(u, v) = 1 / (b(u/v) b(q u v))`.
    pub fn g_cap(&self, u: C64, v: C64) -> C64 {
        (self.b_quot(u, v) * self.b(self.q * u * v)).inv()
    }

    pub fn f_tilde(&self, u: C64, v: C64) -> C64 {
        let q = self.q;
        (v / u) * self.g_cap(u, v) * self.b(q * q * u * u) / self.phi(v)
    }

    pub fn f2_set(&self, u: C64, us: &[C64]) -> C64 {
        prod_over(us, |x| self.f2(u, x))
    }

    pub fn h2_set(&self, u: C64, us: &[C64]) -> C64 {
        prod_over(us, |x| self.h2(u, x))
    }

    pub fn g_cap_set(&self, u: C64, us: &[C64]) -> C64 {
        prod_over(us, |x| self.g_cap(u, x))
    }

    pub fn lambda_b_set(&self, us: &[C64]) -> C64 {
        prod_over(us, |x| self.lambda_b(x))
    }

    /// `chi`, the coefficient of the inhomogeneous term.
    pub fn chi(&self) -> C64 {
        let (l, r) = (&self.left, &self.right);
        let n = self.n() as i32;
        let (ka, kat, ta, tat) = (l.kappa, l.kappa_t, r.tau, r.tau_t);
        -ka * kat * ta * tat
            * (ka * ta / (kat * tat)
                + kat * tat / (ka * ta)
                + l.xi * r.mu_t / (l.xi_t * r.mu) * self.q.powi(n + 1)
                + l.xi_t * r.mu / (l.xi * r.mu_t) * self.q.powi(-n - 1))
    }

    /// `P(u, v, h) = prod_i (b(u v_i) b(q u / v_i))^{h_i} (b(q u v_i) b(u / v_i))^{1 - h_i}`.
    pub fn p_fn(&self, u: C64, h: &[u8]) -> C64 {
        let q = self.q;
        self.v
            .iter()
            .zip(h)
            .fold(ONE, |acc, (&v, &hi)| {
                acc * if hi == 1 {
                    self.b(u * v) * self.b(q * u / v)
                } else {
                    self.b(q * u * v) * self.b_quot(u, v)
                }
            })
    }

    /// `W(h) = prod_i (v_i^-1 kt_minus(v_i^-1) lambda(v_i^-1))^{h_i}`.
    pub fn w_weight(&self, h: &[u8]) -> C64 {
        self.v.iter().zip(h).fold(ONE, |acc, (&v, &hi)| {
            if hi == 1 {
                let vi = v.inv();
                acc * vi * self.kt_minus(vi) * self.lambda(vi)
            } else {
                acc
            }
        })
    }

    /// `prod_i f(v_i^-1, u)^{h_i}`, the left pseudo-eigenvalue dressing.
    pub fn f_dress_left(&self, u: C64, h: &[u8]) -> C64 {
        self.v.iter().zip(h).fold(ONE, |acc, (&v, &hi)| if hi == 1 { acc * self.f2(v.inv(), u) } else { acc })
    }

    /// `prod_i f(v_i, u)^{1 - h_i}`, the right pseudo-eigenvalue dressing.
    pub fn f_dress_right(&self, u: C64, h: &[u8]) -> C64 {
        self.v.iter().zip(h).fold(ONE, |acc, (&v, &hi)| if hi == 0 { acc * self.f2(v, u) } else { acc })
    }

    /// Diagonal coefficient of the gauged transfer matrix, frame-free part.
    pub fn a_tilde(&self, u: C64) -> C64 {
        self.phi(u) * self.kt_plus(u) / u
    }

    pub fn d_tilde(&self, u: C64) -> C64 {
        self.kt_plus(self.cross(u)) / u
    }

    /// Diagonal eigenvalue part of the off-shell action.
    pub fn lambda_d(&self, u: C64, us: &[C64]) -> C64 {
        let ui = self.cross(u);
        self.psi(u) * self.f2_set(u, us) + self.psi(ui) * self.h2_set(u, us)
    }

    /// Diagonal Bethe-equation part for root `ui` with the others `rest`.
    pub fn e_d(&self, ui: C64, rest: &[C64]) -> C64 {
        let c = self.cross(ui);
        self.phi(c)
            * self.phi(ui)
            * (self.kt_plus(ui) * self.kt_minus(ui) * self.lambda(ui) * self.f2_set(ui, rest)
                - self.kt_plus(c) * self.kt_minus(c) * self.lambda(c) * self.h2_set(ui, rest))
    }

    /// Inhomogeneous eigenvalue part.
    pub fn lambda_g(&self, u: C64, us: &[C64]) -> C64 {
        let c = self.cross(u);
        self.chi() * self.c(u) * self.c(c) * self.lambda(u) * self.lambda(c) * self.g_cap_set(u, us)
    }

    /// Inhomogeneous Bethe-equation part.
    pub fn e_g(&self, ui: C64, rest: &[C64]) -> C64 {
        let c = self.cross(ui);
        -self.chi() * self.c(ui) * self.c(c) / self.b(self.q * ui * ui)
            * self.lambda(ui)
            * self.lambda(c)
            * self.g_cap_set(ui, rest)
    }
}

/// Frame-dependent two-point functions.
impl GaugeFrame {
    pub fn g_dyn(&self, inst: &ModelInstance, u: C64, v: C64, m: i32) -> C64 {
        self.gamma(u / v, m + 1) / self.gamma_m(m + 1) * inst.g2(u, v)
    }

    pub fn w_dyn(&self, inst: &ModelInstance, u: C64, v: C64, m: i32) -> C64 {
        self.gamma(u * v, m) / self.gamma_m(m + 1) * inst.w2(u, v)
    }

    pub fn k_dyn(&self, inst: &ModelInstance, u: C64, v: C64, m: i32) -> C64 {
        self.gamma(v / u, m + 1) / self.gamma_m(m + 1) * inst.k2(u, v)
    }

    pub fn n_dyn(&self, inst: &ModelInstance, u: C64, v: C64, m: i32) -> C64 {
        self.gamma((u * v).inv(), m + 2) / self.gamma_m(m + 1) * inst.n2(u, v)
    }

    fn left_roots(inst: &ModelInstance) -> (C64, C64) {
        let l = &inst.left;
        (
            I * l.kappa_t * l.xi / (l.kappa * l.xi_t),
            I * l.kappa_t * l.xi_t / (l.kappa * l.xi),
        )
    }

    /// Coefficient of the creation operator in the gauged transfer matrix.
    pub fn zeta(&self, inst: &ModelInstance, m: i32) -> C64 {
        let (r1, r2) = Self::left_roots(inst);
        let a = self.alpha * self.q.powi(-m - 1);
        inst.left.kappa.powi(2) / self.gamma_m(m) * (a + r1) * (a + r2)
    }

    /// Coefficient of the annihilation operator in the gauged transfer matrix.
    pub fn zeta_t(&self, inst: &ModelInstance, m: i32) -> C64 {
        let (r1, r2) = Self::left_roots(inst);
        let b = self.beta * self.q.powi(m - 1);
        inst.left.kappa.powi(2) / self.gamma_m(m) * (b + r1) * (b + r2)
    }

    pub fn delta(&self, inst: &ModelInstance, m: i32) -> C64 {
        let (r1, r2) = Self::left_roots(inst);
        inst.left.kappa.powi(2) / self.gamma_m(m + 1)
            * (self.alpha * self.q.powi(-m - 1) + r1)
            * (self.beta * self.q.powi(m + 1) + r2)
    }

    pub fn a_tilde_m(&self, inst: &ModelInstance, u: C64, m: i32) -> C64 {
        inst.a_tilde(u) - self.delta(inst, m) * inst.phi(inst.cross(u)) * inst.c(self.q * u) / u
    }

    pub fn d_tilde_m(&self, inst: &ModelInstance, u: C64, m: i32) -> C64 {
        inst.d_tilde(u) + inst.c(self.q * u) * self.delta(inst, m) / u
    }

    /// Left pseudo-eigenvalue constant (this frame taken as the dl frame).
    pub fn eta_n(&self, inst: &ModelInstance, m: i32) -> C64 {
        let n = inst.n() as i32;
        let r = &inst.right;
        let x = self.q.powi(n + m) * self.beta;
        -self.q * r.tau_t.powi(2)
            * (x - I * r.mu_t * r.tau / (r.mu * r.tau_t))
            * (x - I * r.mu * r.tau / (r.mu_t * r.tau_t))
            * self.gamma_m(m)
            / (self.gamma_m(m + n) * self.gamma_m(m + n + 1))
    }

    /// Right pseudo-eigenvalue constant.
    pub fn eta_nt(&self, inst: &ModelInstance, m: i32) -> C64 {
        let n = inst.n() as i32;
        let r = &inst.right;
        let x = self.q.powi(m - n) * self.beta;
        -self.q * r.tau_t.powi(2)
            * (x - I * r.mu_t * r.tau / (r.mu * r.tau_t))
            * (x - I * r.mu * r.tau / (r.mu_t * r.tau_t))
            / self.gamma_m(m + 1)
    }

    pub fn eta_bar(&self, inst: &ModelInstance, m: i32) -> C64 {
        let n = inst.n() as i32;
        self.eta_n(inst, m) * self.gamma_m(m + n) * self.gamma_m(m + n + 1) / self.gamma_m(m)
    }

    /// Closed form of the left/right SoV overlap `mu^N_m(h)`.
    pub fn mu_n(&self, inst: &ModelInstance, h: &[u8], m: i32) -> C64 {
        let q = self.q;
        let v = &inst.v;
        let mut tot = ONE;
        for i in 0..v.len() {
            let ii = i as i32 + 1;
            let hi = h[i] as i32;
            let vi = v[i];
            tot *= self.eta_bar(inst, m - 2 * (ii - 1)) / self.gamma_m(m + 1 + ii)
                * vi.powi(1 - 2 * hi)
                * inst.c(vi)
                * inst.b(q.powi(1 - 2 * hi) * vi * vi);
            for j in 0..i {
                let hj = h[j] as i32;
                let vj = v[j];
                tot *= inst.b(q.powi(1 - 2 * hj) * vj / vi)
                    * inst.b(q.powi(1 - hj - hi) * vi / vj)
                    * inst.b(q.powi(1 - 2 * hj) * vi * vj)
                    * inst.b(q.powi(hj - hi) * vi * vj);
            }
        }
        tot
    }
}

/// Constants linking the two frames.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub inst: &'a ModelInstance,
    pub dr: GaugeFrame,
    pub dl: GaugeFrame,
}

impl<'a> FramePair<'a> {
    pub fn new(inst: &'a ModelInstance, m0: i32, m_len: usize) -> Result<Self> {
        Ok(Self {
            inst,
            dr: inst.gauge_dr(m0)?,
            dl: inst.gauge_dl(m0, m_len)?,
        })
    }

    fn den_b(&self, p: i32, m: i32) -> C64 {
        self.dr.alpha - self.inst.q.powi(m + p - 2) * self.dl.beta
    }

    fn den_c(&self, p: i32, m: i32) -> C64 {
        self.inst.q.powi(2 - m - p) * self.dr.alpha - self.dl.beta
    }

    pub fn b_pm(&self, p: i32, m: i32) -> C64 {
        (self.dr.alpha - self.inst.q.powi(m - p) * self.dl.alpha) / self.den_b(p, m)
    }

    pub fn c_pm(&self, p: i32, m: i32) -> C64 {
        (self.inst.q.powi(m - p) * self.dr.beta - self.dl.beta) / self.den_c(p, m)
    }

    /// Checked versions refusing near-vanishing denominators.
    pub fn b_pm_checked(&self, p: i32, m: i32) -> Result<C64> {
        let d = self.den_b(p, m);
        if d.norm() <= 1e-8 {
            return Err(singular("alpha_dr - beta_dl q^(m+p-2)", d.norm()));
        }
        Ok(self.b_pm(p, m))
    }

    pub fn c_pm_checked(&self, p: i32, m: i32) -> Result<C64> {
        let d = self.den_c(p, m);
        if d.norm() <= 1e-8 {
            return Err(singular("q^(2-m-p) alpha_dr - beta_dl", d.norm()));
        }
        Ok(self.c_pm(p, m))
    }

    pub fn eta(&self) -> C64 {
        let m0 = self.dr.m0;
        self.b_pm(m0, m0)
    }

    pub fn eta_hat(&self) -> C64 {
        let m0 = self.dr.m0;
        self.inst.left.kappa.powi(2) * self.dl.gamma_m(m0 - 1) * self.eta() / self.inst.q
    }

    /// Closed-form vacuum overlap `<Omega_m (dl) | Omega_m0 (dr)>`.
    pub fn vacuum_overlap_formula(&self, m: i32) -> C64 {
        let (q, m0) = (self.inst.q, self.dr.m0);
        (1..=self.inst.n() as i32).fold(ONE, |acc, n| {
            acc * q * (self.dr.alpha * q.powi(-m0 - n) - self.dl.beta * q.powi(m + n)) / self.dl.gamma_m(m + n + 1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasicFn {
    B,
    C,
    Phi,
    KMinus,
    KPlus,
    KtMinus,
    KtPlus,
    U,
    Lambda,
    LambdaB,
    LambdaBt,
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwoPointFn {
    F,
    G,
    W,
    H,
    K,
    N,
    GCap,
    FTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynamicalFn {
    Gamma,
    G,
    W,
    K,
    N,
}

fn guard_b(inst: &ModelInstance, label: &str, x: C64) -> Result<()> {
    // b(x) has a pole at 0 and zeros at x = +-1; callers only guard the
    // denominators, so the zero set matters here.
    guard(label, x)?;
    guard(label, inst.b(x))
}

fn guard_phi(inst: &ModelInstance, u: C64) -> Result<()> {
    guard("u", u)?;
    guard("b(q u^2)", inst.b(inst.q * u * u))
}

fn guard_vacuum(inst: &ModelInstance, u: C64) -> Result<()> {
    guard("u", u)
        .and(inst.v.iter().try_for_each(|&v| guard("v", v)))
}

pub fn eval_basic(name: BasicFn, u: C64, inst: &ModelInstance) -> Result<C64> {
    use BasicFn::*;
    match name {
        Phi | Psi => guard_phi(inst, u)?,
        Lambda | LambdaB | LambdaBt => guard_vacuum(inst, u)?,
        _ => guard("u", u)?,
    }
    Ok(match name {
        B => inst.b(u),
        C => inst.c(u),
        Phi => inst.phi(u),
        KMinus => inst.k_minus(u),
        KPlus => inst.k_plus(u),
        KtMinus => inst.kt_minus(u),
        KtPlus => inst.kt_plus(u),
        U => inst.u_var(u),
        Lambda => inst.lambda(u),
        LambdaB => inst.lambda_b(u),
        LambdaBt => inst.lambda_bt(u),
        Psi => inst.psi(u),
    })
}

pub fn eval_two_point(name: TwoPointFn, u: C64, v: C64, inst: &ModelInstance) -> Result<C64> {
    use TwoPointFn::*;
    guard("u", u)?;
    guard("v", v)?;
    let q = inst.q;
    match name {
        F => {
            guard_b(inst, "b(v/u)", v / u)?;
            guard_b(inst, "b(q u v)", q * u * v)?;
        }
        G => {
            guard_b(inst, "b(u/v)", u / v)?;
            guard_phi(inst, inst.cross(v))?;
        }
        W => guard_b(inst, "b(q u v)", q * u * v)?,
        H => {
            guard_b(inst, "b(q u v)", q * u * v)?;
            guard_b(inst, "b(u/v)", u / v)?;
        }
        K => {
            guard_b(inst, "b(v/u)", v / u)?;
            guard_phi(inst, u)?;
        }
        N => {
            guard_b(inst, "b(q u v)", q * u * v)?;
            guard_phi(inst, u)?;
            guard_phi(inst, inst.cross(v))?;
        }
        GCap => {
            guard_b(inst, "b(u/v)", u / v)?;
            guard_b(inst, "b(q u v)", q * u * v)?;
        }
        FTilde => {
            guard_b(inst, "b(u/v)", u / v)?;
            guard_b(inst, "b(q u v)", q * u * v)?;
            guard_phi(inst, v)?;
            guard("phi(v)", inst.phi(v))?;
        }
    }
    Ok(match name {
        F => inst.f2(u, v),
        G => inst.g2(u, v),
        W => inst.w2(u, v),
        H => inst.h2(u, v),
        K => inst.k2(u, v),
        N => inst.n2(u, v),
        GCap => inst.g_cap(u, v),
        FTilde => inst.f_tilde(u, v),
    })
}

pub fn eval_dynamical(
    name: DynamicalFn,
    u: C64,
    v: C64,
    m: i32,
    frame: &GaugeFrame,
    inst: &ModelInstance,
) -> Result<C64> {
    use DynamicalFn::*;
    if name == Gamma {
        guard("u", u)?;
        return Ok(frame.gamma(u, m));
    }
    frame.gamma_checked(m + 1)?;
    let base = match name {
        G => TwoPointFn::G,
        W => TwoPointFn::W,
        K => TwoPointFn::K,
        N => TwoPointFn::N,
        Gamma => unreachable!(),
    };
    eval_two_point(base, u, v, inst)?;
    Ok(match name {
        G => frame.g_dyn(inst, u, v, m),
        W => frame.w_dyn(inst, u, v, m),
        K => frame.k_dyn(inst, u, v, m),
        N => frame.n_dyn(inst, u, v, m),
        Gamma => unreachable!(),
    })
}

/// Every scalar constant of the construction at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constants {
    pub zeta: C64,
    pub zeta_t: C64,
    pub delta: C64,
    pub eta: C64,
    pub eta_hat: C64,
    pub chi: C64,
    pub b_pm: C64,
    pub c_pm: C64,
    pub eta_n: C64,
    pub eta_nt: C64,
    pub eta_bar: C64,
    pub w: C64,
    pub mu: C64,
}

/// Constants for reference level `m0`, string length `m_len`, working level
/// `m`, linear-relation index `p` and bit string `h`. Frame-dependent
/// quantities use the dl frame.
pub fn eval_constants(inst: &ModelInstance, m0: i32, m_len: usize, m: i32, p: i32, h: &[u8]) -> Result<Constants> {
    if h.len() != inst.n() {
        return Err(Error::Shape(format!("bit string length {} != N = {}", h.len(), inst.n())));
    }
    let pair = FramePair::new(inst, m0, m_len)?;
    let dl = pair.dl;
    let n = inst.n() as i32;
    for k in [m, m + 1, m + n, m + n + 1, m0 - 1] {
        dl.gamma_checked(k)?;
    }
    Ok(Constants {
        zeta: dl.zeta(inst, m),
        zeta_t: dl.zeta_t(inst, m),
        delta: dl.delta(inst, m),
        eta: pair.eta(),
        eta_hat: pair.eta_hat(),
        chi: inst.chi(),
        b_pm: pair.b_pm_checked(p, m)?,
        c_pm: pair.c_pm_checked(p, m)?,
        eta_n: dl.eta_n(inst, m),
        eta_nt: dl.eta_nt(inst, m),
        eta_bar: dl.eta_bar(inst, m),
        w: inst.w_weight(h),
        mu: dl.mu_n(inst, h, m),
    })
}

pub fn eval_p(u: C64, h: &[u8], inst: &ModelInstance) -> Result<C64> {
    if h.len() != inst.n() {
        return Err(Error::Shape(format!("bit string length {} != N = {}", h.len(), inst.n())));
    }
    guard("u", u)?;
    Ok(inst.p_fn(u, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Identity {
    Fr1,
    Fr2,
    Fr3,
    OffshellBv4,
    FunctionalSystem1,
}

/// `|a - b| / (|a| + |b| + 1)`.
pub fn sym_residual(a: C64, b: C64) -> f64 {
    (a - b).norm() / (a.norm() + b.norm() + 1.0)
}

fn guard_roots(inst: &ModelInstance, u: C64, us: &[C64]) -> Result<()> {
    let mut all = vec![u];
    all.extend_from_slice(us);
    for (i, &x) in all.iter().enumerate() {
        guard_phi(inst, x)?;
        guard_phi(inst, inst.cross(x))?;
        guard("phi", inst.phi(x))?;
        for &y in &all[..i] {
            guard_b(inst, "b(x/y)", x / y)?;
            guard_b(inst, "b(q x y)", inst.q * x * y)?;
        }
        guard_b(inst, "b(q x^2)", inst.q * x * x)?;
    }
    Ok(())
}

/// Symmetric-relative residual of one scalar identity at the given point.
/// `m` is the working level of the dynamical functions; `h` is only read by
/// the identities that involve a bit string.
pub fn check_identity(
    name: Identity,
    inst: &ModelInstance,
    frame: &GaugeFrame,
    m: i32,
    us: &[C64],
    u: C64,
    h: &[u8],
) -> Result<f64> {
    guard_roots(inst, u, us)?;
    let mm = us.len() as i32;
    let (lhs, rhs) = match name {
        Identity::Fr1 => {
            frame.gamma_checked(m - 1)?;
            let mut l = inst.f2_set(u, us);
            for (i, &ui) in us.iter().enumerate() {
                let rest = without(us, i);
                l += frame.g_dyn(inst, u, ui, m - 2) * inst.f2_set(ui, &rest)
                    - inst.phi(ui) * frame.w_dyn(inst, u, ui, m - 2) * inst.h2_set(ui, &rest);
            }
            (l, frame.gamma_m(m - 2 * mm - 1) / frame.gamma_m(m - 1))
        }
        Identity::Fr2 => {
            frame.gamma_checked(m - 1)?;
            let mut s = C64::new(0.0, 0.0);
            for (i, &ui) in us.iter().enumerate() {
                let rest = without(us, i);
                s += inst.phi(ui) * frame.k_dyn(inst, u, ui, m - 2) * inst.h2_set(ui, &rest)
                    - frame.n_dyn(inst, u, ui, m - 2) * inst.f2_set(ui, &rest);
            }
            (
                inst.h2_set(u, us) + s / inst.phi(u),
                frame.gamma_m(m - 2 * mm - 1) / frame.gamma_m(m - 1),
            )
        }
        Identity::Fr3 => {
            let q = inst.q;
            let l = us.iter().enumerate().fold(C64::new(0.0, 0.0), |acc, (i, &ui)| {
                let rest = without(us, i);
                acc + inst.phi(ui) * inst.h2_set(ui, &rest) + inst.phi(inst.cross(ui)) * inst.f2_set(ui, &rest)
            });
            (l, (q.powi(2 * mm) - q.powi(-2 * mm)) / (q - q.inv()))
        }
        Identity::OffshellBv4 => {
            check_full_set(inst, us, h)?;
            let l = us.iter().enumerate().fold(C64::new(0.0, 0.0), |acc, (i, &ui)| {
                acc + inst.g_cap(u, ui) * inst.p_fn(ui, h) * inst.g_cap_set(ui, &without(us, i))
            });
            (l, inst.p_fn(u, h) * inst.g_cap_set(u, us) - 1.0)
        }
        Identity::FunctionalSystem1 => {
            check_full_set(inst, us, h)?;
            let mut r = inst.lambda_g(u, us) / (inst.lambda_b(u) * inst.f_dress_left(u, h));
            for (i, &ui) in us.iter().enumerate() {
                r += inst.f_tilde(u, ui) * inst.e_g(ui, &without(us, i))
                    / (inst.lambda_b(ui) * inst.f_dress_left(ui, h));
            }
            (-inst.chi() * inst.c(inst.q * u) / u, r)
        }
    };
    Ok(sym_residual(lhs, rhs))
}

fn check_full_set(inst: &ModelInstance, us: &[C64], h: &[u8]) -> Result<()> {
    if us.len() != inst.n() || h.len() != inst.n() {
        return Err(Error::Shape(format!(
            "identity needs N = {} roots and bits, got {} and {}",
            inst.n(),
            us.len(),
            h.len()
        )));
    }
    Ok(())
}

/// Random spectral point with `|u|` in `[0.8, 1.25]` and uniform phase.
pub fn random_point<R: Rng>(rng: &mut R) -> C64 {
    C64::from_polar(rng.gen_range(0.8..1.25), rng.gen_range(0.0..std::f64::consts::TAU))
}

/// Draws points until `eval` succeeds; singular draws are retried up to
/// [`RESAMPLE_RETRIES`] times.
pub fn sample_point<R: Rng, T>(rng: &mut R, mut eval: impl FnMut(C64) -> Result<T>) -> Result<(C64, T)> {
    let mut last = None;
    for _ in 0..=RESAMPLE_RETRIES {
        let u = random_point(rng);
        match eval(u) {
            Ok(v) => return Ok((u, v)),
            Err(e @ Error::Singularity { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(Error::Sampling(RESAMPLE_RETRIES)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::sample_generic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (ModelInstance, ChaCha8Rng) {
        (sample_generic(seed, n).unwrap(), ChaCha8Rng::seed_from_u64(seed + 1000))
    }

    #[test]
    fn basic_special_values() {
        let (inst, _) = setup(2, 1);
        let q = inst.q;
        assert!((eval_basic(BasicFn::B, q, &inst).unwrap() - ONE).norm() < 1e-14);
        assert!(eval_basic(BasicFn::C, I, &inst).unwrap().norm() < 1e-15);
        assert!(eval_basic(BasicFn::C, ONE, &inst).unwrap().norm() < 1e-15);
        let phi1 = eval_basic(BasicFn::Phi, ONE, &inst).unwrap();
        assert!((phi1 - (q + q.inv())).norm() < 1e-13);
    }

    #[test]
    fn phi_pole_is_named() {
        let (inst, _) = setup(1, 2);
        let u = (inst.q.inv()).sqrt();
        match eval_basic(BasicFn::Phi, u, &inst) {
            Err(Error::Singularity { factor, .. }) => assert_eq!(factor, "b(q u^2)"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_products_and_h_rearranged() {
        let (inst, mut rng) = setup(2, 3);
        let u = random_point(&mut rng);
        assert_eq!(inst.f2_set(u, &[]), ONE);
        let v = random_point(&mut rng);
        let q = inst.q;
        let lhs = inst.h2(u, v) * inst.b(q * u * v) * inst.b(u / v);
        let rhs = inst.b(q * q * u * v) * inst.b(q * u / v);
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn b_product_is_u_difference() {
        let (inst, mut rng) = setup(1, 4);
        let q = inst.q;
        for _ in 0..20 {
            let (u, v) = (random_point(&mut rng), random_point(&mut rng));
            let lhs = inst.b(u / v) * inst.b(q * u * v);
            let rhs = (q + q.inv()) * (inst.u_var(u) - inst.u_var(v)) / (q - q.inv()).powi(2);
            assert!((lhs - rhs).norm() <= 1e-12 * (lhs.norm() + 1.0));
        }
    }

    #[test]
    fn dynamical_functions() {
        let (inst, mut rng) = setup(2, 5);
        let frame = inst.gauge_dl(0, 2).unwrap();
        assert_eq!(eval_dynamical(DynamicalFn::Gamma, ONE, ONE, 3, &frame, &inst).unwrap(), frame.gamma_m(3));
        let (u, v) = (random_point(&mut rng), random_point(&mut rng));
        let m = 1;
        let g = eval_dynamical(DynamicalFn::G, u, v, m, &frame, &inst).unwrap();
        let expect = frame.gamma(u / v, m + 1) * inst.g2(u, v);
        assert!((g * frame.gamma_m(m + 1) - expect).norm() <= 1e-13 * expect.norm().max(1.0));
        // zero of the numerator gamma(u/v, m + 1)
        let ratio = (frame.beta * inst.q.powi(2 * m + 2) / frame.alpha).sqrt();
        let u0 = ratio * v;
        let g0 = eval_dynamical(DynamicalFn::G, u0, v, m, &frame, &inst).unwrap();
        assert!(g0.norm() < 1e-12);
    }

    #[test]
    fn p_properties() {
        let (inst, mut rng) = setup(3, 6);
        let u = random_point(&mut rng);
        for bits in 0..8u8 {
            let h: Vec<u8> = (0..3).map(|i| (bits >> i) & 1).collect();
            let a = eval_p(u, &h, &inst).unwrap();
            let b = eval_p(inst.cross(u), &h, &inst).unwrap();
            assert!(sym_residual(a, b) < 1e-12);
        }
        let zeros = [0u8; 3];
        let ones = [1u8; 3];
        assert!(sym_residual(inst.p_fn(u, &zeros), inst.lambda_bt(u) / (u * inst.c(u))) < 1e-13);
        assert!(sym_residual(inst.p_fn(u, &ones), inst.lambda_b(u) / (u * inst.c(u))) < 1e-13);
        // exact factor at u = v_1
        let v1 = inst.v[0];
        let h = [1u8, 0, 1];
        let rest = inst.b(inst.q * v1 * inst.v[1]) * inst.b(v1 / inst.v[1]) * inst.b(v1 * inst.v[2]) * inst.b(inst.q * v1 / inst.v[2]);
        let direct = inst.b(inst.q) * inst.b(v1 * v1) * rest;
        assert!(sym_residual(inst.p_fn(v1, &h), direct) < 1e-13);
    }

    #[test]
    fn fr3_single_root() {
        let (inst, mut rng) = setup(1, 7);
        let frame = inst.gauge_dl(0, 1).unwrap();
        let u1 = random_point(&mut rng);
        let r = check_identity(Identity::Fr3, &inst, &frame, 0, &[u1], ONE * 1.1, &[0]).unwrap();
        assert!(r <= 1e-12);
        let s = inst.phi(u1) + inst.phi(inst.cross(u1));
        assert!(sym_residual(s, inst.q + inst.q.inv()) < 1e-12);
    }

    #[test]
    fn fr1_empty_set_is_exact() {
        let (inst, mut rng) = setup(1, 8);
        let frame = inst.gauge_dl(0, 0).unwrap();
        let u = random_point(&mut rng);
        assert_eq!(check_identity(Identity::Fr1, &inst, &frame, 2, &[], u, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn fr1_fr2_random_sets() {
        let (inst, mut rng) = setup(2, 9);
        let frame = inst.gauge_generic(C64::new(0.7, 0.4), C64::new(-0.3, 1.1), 0).unwrap();
        for m_len in 1..=4 {
            let us: Vec<C64> = (0..m_len).map(|_| random_point(&mut rng)).collect();
            let u = random_point(&mut rng);
            for id in [Identity::Fr1, Identity::Fr2, Identity::Fr3] {
                let r = check_identity(id, &inst, &frame, 1, &us, u, &[0, 0]).unwrap();
                assert!(r <= 1e-10, "{id:?} M={m_len}: {r:e}");
            }
        }
    }

    #[test]
    fn offshell_bv4_single_site() {
        let (inst, mut rng) = setup(1, 10);
        let frame = inst.gauge_dl(0, 1).unwrap();
        let u1 = random_point(&mut rng);
        for _ in 0..20 {
            let u = random_point(&mut rng);
            let r = check_identity(Identity::OffshellBv4, &inst, &frame, 0, &[u1], u, &[0]).unwrap();
            assert!(r <= 1e-11);
        }
    }

    #[test]
    fn constants_chi_identity() {
        // eta_hat * eta^N_{m0-2} * <Omega_{m0-4}|Omega> / <Omega_{m0-2}|Omega> = -chi
        for n in 1..=3 {
            let (inst, _) = setup(n, 11 + n as u64);
            let pair = FramePair::new(&inst, 0, n).unwrap();
            let val = pair.eta_hat() * pair.dl.eta_n(&inst, -2) * pair.vacuum_overlap_formula(-4)
                / pair.vacuum_overlap_formula(-2);
            assert!((val + inst.chi()).norm() <= 1e-10 * inst.chi().norm());
        }
    }

    #[test]
    fn eta_vanishes_for_equal_alphas() {
        let inst = crate::params::sample_constrained(3, 2).unwrap();
        let c = eval_constants(&inst, 0, 2, 0, 0, &[0, 0]).unwrap();
        assert!(c.eta.norm() < 1e-13);
        assert!(c.chi.norm() < 1e-12);
    }

    #[test]
    fn sample_point_retries_on_poles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut calls = 0;
        let r = sample_point(&mut rng, |u| {
            calls += 1;
            if calls < 3 {
                Err(singular("test", 0.0))
            } else {
                Ok(u)
            }
        });
        assert!(r.is_ok());
        assert_eq!(calls, 3);
        let always: Result<(C64, ())> = sample_point(&mut rng, |_| Err(singular("x", 0.0)));
        assert!(always.is_err());
    }
}
