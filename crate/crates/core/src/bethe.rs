//! Highest-weight vector, creation strings, off-shell Bethe vectors, the
//! eigenvalue functions and a root solver driven by the transfer-matrix
//! spectrum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigen::eigenpairs;
use crate::error::{singular, Error, Result};
use crate::exec::Exec;
use crate::functions::{random_point, sample_point, without, FramePair, POLE_MARGIN, RESAMPLE_RETRIES};
use crate::gauge::{tensor_vectors, x_vec, Dynamical};
use crate::lattice::{transfer_raw, ChainOperator};
use crate::linalg::{axpy_vec, norm, scale_vec, solve, vdot, CMatrix, LeastSquares, C64, ONE, ZERO};
use crate::params::{GaugeFrame, ModelInstance};
use crate::poly::{canonical_preimage, circle_nodes, interpolate_in_u, CPolyU};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum StateTag {
    Vacuum,
    Bethe(usize),
    SovLeft(Vec<u8>),
    SovRight(Vec<u8>),
    Eigen,
}

/// A vector of the `2^N`-dimensional chain space.
#[derive(Debug, Clone, Serialize)]
pub struct ChainState {
    pub amplitudes: Vec<C64>,
    pub tag: StateTag,
}

impl ChainState {
    pub fn new(amplitudes: Vec<C64>, tag: StateTag) -> Self {
        Self { amplitudes, tag }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }
}

/// `|Omega> = (x) |X(v_i, m0 + i)>` in the dr frame at `m0`.
pub fn highest_weight_vector(inst: &ModelInstance, m0: i32) -> Result<ChainState> {
    let dr = inst.gauge_dr(m0)?;
    Ok(ChainState::new(omega_in(&dr, inst, m0), StateTag::Vacuum))
}

fn omega_in(dr: &GaugeFrame, inst: &ModelInstance, m0: i32) -> Vec<C64> {
    let factors: Vec<[C64; 2]> = inst.v.iter().enumerate().map(|(i, &v)| x_vec(dr, v, m0 + i as i32 + 1)).collect();
    tensor_vectors(&factors)
}

fn check_levels(frame: &GaugeFrame, m: i32, len: usize) -> Result<()> {
    for k in m - 1..=m + 2 * len as i32 + 1 {
        frame.gamma_checked(k)?;
    }
    Ok(())
}

/// `B(u_1, m + 2(M-1)) ... B(u_M, m)` applied to `v`, rightmost first.
fn apply_string(ops: &[&Dynamical], m: i32, v: &[C64]) -> Vec<C64> {
    let len = ops.len() as i32;
    let mut w = v.to_vec();
    for (j, op) in ops.iter().enumerate().rev() {
        w = op.b(m + 2 * (len - 1 - j as i32)).mul_vec(&w);
    }
    w
}

/// The ordered product of dynamical creation operators in `frame`.
pub fn creation_string(us: &[C64], m: i32, frame: &GaugeFrame, inst: &ModelInstance) -> Result<ChainOperator> {
    if us.len() > inst.n() + 1 {
        return Err(Error::Shape(format!("string of length {} on {} sites", us.len(), inst.n())));
    }
    check_levels(frame, m, us.len())?;
    let len = us.len() as i32;
    let mut out = CMatrix::identity(inst.dim());
    for (j, &u) in us.iter().enumerate() {
        if u.norm() <= POLE_MARGIN {
            return Err(singular("u", u.norm()));
        }
        out = out.matmul(&Dynamical::new(inst, frame, u).b(m + 2 * (len - 1 - j as i32)));
    }
    Ok(ChainOperator::new(out, us.first().copied().unwrap_or(ONE), "B_string"))
}

/// `|Psi(u)> = B_dl(u, m0) |Omega>` with the dl frame for `M = |u|`.
pub fn bethe_vector(us: &[C64], inst: &ModelInstance, m0: i32) -> Result<ChainState> {
    if us.len() > inst.n() {
        return Err(Error::Shape(format!("{} roots on {} sites", us.len(), inst.n())));
    }
    let pair = FramePair::new(inst, m0, us.len())?;
    check_levels(&pair.dl, m0, us.len())?;
    let dys: Vec<Dynamical> = us.iter().map(|&u| Dynamical::new(inst, &pair.dl, u)).collect();
    let refs: Vec<&Dynamical> = dys.iter().collect();
    let om = omega_in(&pair.dr, inst, m0);
    Ok(ChainState::new(apply_string(&refs, m0, &om), StateTag::Bethe(us.len())))
}

/// Scalar functions entering the off-shell action.
#[derive(Debug, Clone, Serialize)]
pub struct EigenvalueTerms {
    pub lambda_d: C64,
    pub e_d: Vec<C64>,
    pub lambda_g: C64,
    pub e_g: Vec<C64>,
    pub lambda: C64,
    pub e: Vec<C64>,
    pub f_tilde: Vec<C64>,
}

fn pole_guard(inst: &ModelInstance, u: C64, us: &[C64]) -> Result<()> {
    for &x in us {
        let d = inst.b_quot(u, x).norm().min(inst.b(inst.q * u * x).norm());
        if d <= POLE_MARGIN {
            return Err(singular("b(u/u_i) b(q u u_i)", d));
        }
    }
    Ok(())
}

pub fn eigenvalue_terms(u: C64, us: &[C64], inst: &ModelInstance) -> Result<EigenvalueTerms> {
    pole_guard(inst, u, us)?;
    let lambda_d = inst.lambda_d(u, us);
    let lambda_g = inst.lambda_g(u, us);
    let (mut e_d, mut e_g, mut f_tilde) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &ui) in us.iter().enumerate() {
        let rest = without(us, i);
        e_d.push(inst.e_d(ui, &rest));
        e_g.push(inst.e_g(ui, &rest));
        f_tilde.push(inst.f_tilde(u, ui));
    }
    let e = e_d.iter().zip(&e_g).map(|(a, b)| a + b).collect();
    Ok(EigenvalueTerms {
        lambda_d,
        e_d,
        lambda_g,
        e_g,
        lambda: lambda_d + lambda_g,
        e,
        f_tilde,
    })
}

/// Vector pieces shared by the three off-shell checks.
struct OffShell<'a> {
    inst: &'a ModelInstance,
    pair: FramePair<'a>,
    m0: i32,
    omega: Vec<C64>,
    at_u: Dynamical<'a>,
    at_roots: Vec<Dynamical<'a>>,
}

impl<'a> OffShell<'a> {
    fn new(u: C64, us: &[C64], inst: &'a ModelInstance, m0: i32, m_len: usize) -> Result<Self> {
        if u.norm() <= POLE_MARGIN {
            return Err(singular("u", u.norm()));
        }
        pole_guard(inst, u, us)?;
        let pair = FramePair::new(inst, m0, m_len)?;
        check_levels(&pair.dl, m0 - 2, m_len + 2)?;
        let omega = omega_in(&pair.dr, inst, m0);
        Ok(Self {
            inst,
            omega,
            at_u: Dynamical::new(inst, &pair.dl, u),
            at_roots: us.iter().map(|&x| Dynamical::new(inst, &pair.dl, x)).collect(),
            pair,
            m0,
        })
    }

    fn u(&self) -> C64 {
        self.at_u.u()
    }

    fn psi(&self) -> Vec<C64> {
        let refs: Vec<&Dynamical> = self.at_roots.iter().collect();
        apply_string(&refs, self.m0, &self.omega)
    }

    /// `|Psi({u} U u_i-hat)>`, with `u` in slot `i`'s place at the front.
    fn psi_swapped(&self, i: usize) -> Vec<C64> {
        let mut refs: Vec<&Dynamical> = vec![&self.at_u];
        refs.extend(self.at_roots.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, d)| d));
        apply_string(&refs, self.m0, &self.omega)
    }

    /// `eta-hat u^-1 c(qu) B({u} U u, m0 - 2) |Omega>`.
    fn extra_term(&self) -> Vec<C64> {
        let mut refs: Vec<&Dynamical> = vec![&self.at_u];
        refs.extend(self.at_roots.iter());
        let u = self.u();
        let pre = self.pair.eta_hat() * self.inst.c(self.inst.q * u) / u;
        scale_vec(&apply_string(&refs, self.m0 - 2, &self.omega), pre)
    }
}

fn combine(lhs: &[C64], terms: &[Vec<C64>], extra_scale: f64) -> f64 {
    let mut diff = lhs.to_vec();
    let mut scale = norm(lhs).max(extra_scale);
    for t in terms {
        axpy_vec(&mut diff, -ONE, t);
        scale = scale.max(norm(t));
    }
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Residual of the modified-transfer action on an off-shell vector with
/// `M = |u|` roots, relative to the largest term.
pub fn check_offshell_transfer(u: C64, us: &[C64], inst: &ModelInstance, m0: i32) -> Result<f64> {
    let m_len = us.len();
    if m_len > inst.n() {
        return Err(Error::Shape(format!("{m_len} roots on {} sites", inst.n())));
    }
    let os = OffShell::new(u, us, inst, m0, m_len)?;
    let psi = os.psi();
    let lhs = os.at_u.t_modified(m0 + 2 * m_len as i32)?.mul_vec(&psi);
    let mut terms = vec![scale_vec(&psi, inst.lambda_d(u, us))];
    for (i, &ui) in us.iter().enumerate() {
        let coef = inst.f_tilde(u, ui) * inst.e_d(ui, &without(us, i));
        terms.push(scale_vec(&os.psi_swapped(i), coef));
    }
    terms.push(os.extra_term());
    Ok(combine(&lhs, &terms, 0.0))
}

fn require_full(us: &[C64], inst: &ModelInstance) -> Result<()> {
    if us.len() != inst.n() {
        return Err(Error::Shape(format!("{} roots, expected {}", us.len(), inst.n())));
    }
    Ok(())
}

/// Residual of the identity expressing the `N+1` string term through
/// `Lambda_g` and `E_g`. The scale includes `|Lambda_d Psi|` so the ratio
/// stays meaningful when the inhomogeneous pieces vanish.
pub fn check_proposition1(u: C64, us: &[C64], inst: &ModelInstance, m0: i32) -> Result<f64> {
    require_full(us, inst)?;
    let os = OffShell::new(u, us, inst, m0, us.len())?;
    let psi = os.psi();
    let lhs = os.extra_term();
    let mut terms = vec![scale_vec(&psi, inst.lambda_g(u, us))];
    for (i, &ui) in us.iter().enumerate() {
        let coef = inst.f_tilde(u, ui) * inst.e_g(ui, &without(us, i));
        terms.push(scale_vec(&os.psi_swapped(i), coef));
    }
    let diag = norm(&psi) * inst.lambda_d(u, us).norm();
    Ok(combine(&lhs, &terms, diag))
}

/// Residual of the full transfer-matrix action on `|Psi(u)>`, `|u| = N`.
pub fn check_full_offshell(u: C64, us: &[C64], inst: &ModelInstance, m0: i32) -> Result<f64> {
    require_full(us, inst)?;
    let os = OffShell::new(u, us, inst, m0, us.len())?;
    let psi = os.psi();
    let lhs = os.at_u.mono.transfer(inst).mul_vec(&psi);
    let terms_s = eigenvalue_terms(u, us, inst)?;
    let mut terms = vec![scale_vec(&psi, terms_s.lambda)];
    for i in 0..us.len() {
        terms.push(scale_vec(&os.psi_swapped(i), terms_s.f_tilde[i] * terms_s.e[i]));
    }
    Ok(combine(&lhs, &terms, 0.0))
}

/// Residuals of the highest-weight actions of `A`, `D`, `C` in the dr frame.
pub fn highest_weight_actions(u: C64, inst: &ModelInstance, m0: i32) -> Result<[f64; 3]> {
    let dr = inst.gauge_dr(m0)?;
    check_levels(&dr, m0 - 2, 2)?;
    let om = omega_in(&dr, inst, m0);
    let dy = Dynamical::new(inst, &dr, u);
    let cu = inst.cross(u);
    let ea = u * inst.kt_minus(u) * inst.lambda(u);
    let ed = u * inst.phi(cu) * inst.kt_minus(cu) * inst.lambda(cu);
    let a = combine(&dy.a(m0).mul_vec(&om), &[scale_vec(&om, ea)], 0.0);
    let d = combine(&dy.d(m0)?.mul_vec(&om), &[scale_vec(&om, ed)], 0.0);
    let cm = dy.c(m0);
    let c = norm(&cm.mul_vec(&om)) / (cm.frobenius() * norm(&om));
    Ok([a, d, c])
}

/// `|B_dr(u_0, m0+2N) ... B_dr(u_N, m0)|` over the product of factor norms.
pub fn nilpotency_residual(us: &[C64], inst: &ModelInstance, m0: i32) -> Result<f64> {
    let n = inst.n();
    if us.len() != n + 1 {
        return Err(Error::Shape(format!("{} points, expected {}", us.len(), n + 1)));
    }
    let dr = inst.gauge_dr(m0)?;
    check_levels(&dr, m0, n + 1)?;
    let mut prod = CMatrix::identity(inst.dim());
    let mut scale = 1.0;
    for (j, &u) in us.iter().enumerate() {
        let b = Dynamical::new(inst, &dr, u).b(m0 + 2 * (n - j) as i32);
        scale *= b.frobenius();
        prod = prod.matmul(&b);
    }
    Ok(prod.frobenius() / scale)
}

/// Residuals of the off-diagonal highest-weight actions of `A_dl(u, m0)`
/// and `D_dl(u, m0)`.
pub fn off_diagonal_actions(u: C64, inst: &ModelInstance, m0: i32, m_len: usize) -> Result<(f64, f64)> {
    let pair = FramePair::new(inst, m0, m_len)?;
    check_levels(&pair.dl, m0 - 3, 2)?;
    let om = omega_in(&pair.dr, inst, m0);
    let dy = Dynamical::new(inst, &pair.dl, u);
    let eta = pair.eta();
    let cu = inst.cross(u);
    let bo = dy.b(m0 - 2).mul_vec(&om);
    let ea = u * inst.kt_minus(u) * inst.lambda(u);
    let ed = u * inst.phi(cu) * inst.kt_minus(cu) * inst.lambda(cu);
    let phi = inst.phi(u);
    let a = combine(&dy.a(m0).mul_vec(&om), &[scale_vec(&om, ea), scale_vec(&bo, eta)], 0.0);
    let d = combine(&dy.d(m0)?.mul_vec(&om), &[scale_vec(&om, ed), scale_vec(&bo, -phi * eta)], 0.0);
    Ok((a, d))
}

fn check_distinct(us: &[C64], inst: &ModelInstance) -> Result<()> {
    for i in 0..us.len() {
        for j in 0..i {
            let d = (inst.u_var(us[i]) - inst.u_var(us[j])).norm();
            if d <= 1e-10 {
                return Err(Error::CoincidentRoots(format!("roots {j} and {i} share U ({d:e})")));
            }
        }
    }
    Ok(())
}

/// Bethe-equation values `E(u_i)` each divided by the larger of its two
/// constituent terms.
pub fn bethe_residuals(us: &[C64], inst: &ModelInstance) -> Result<Vec<C64>> {
    require_full(us, inst)?;
    check_distinct(us, inst)?;
    Ok(raw_bethe(us, inst)
        .into_iter()
        .map(|(ed, eg)| {
            let s = ed.norm().max(eg.norm());
            if s == 0.0 {
                ZERO
            } else {
                (ed + eg) / s
            }
        })
        .collect())
}

fn raw_bethe(us: &[C64], inst: &ModelInstance) -> Vec<(C64, C64)> {
    (0..us.len())
        .map(|i| {
            let rest = without(us, i);
            (inst.e_d(us[i], &rest), inst.e_g(us[i], &rest))
        })
        .collect()
}

/// Eigenvalue branch: `Lambda` as a polynomial in `U`, with the Bethe roots
/// and `Q` when known.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralFunction {
    pub lambda: CPolyU,
    pub roots: Option<Vec<C64>>,
    pub q_poly: Option<CPolyU>,
}

impl SpectralFunction {
    pub fn eval(&self, u: C64, q: C64) -> C64 {
        self.lambda.eval(u, q)
    }
}

/// `((q + q^-1) / (q - q^-1)^2)^N`, the normalisation of `Q`.
pub fn q_normalisation(inst: &ModelInstance) -> C64 {
    let q = inst.q;
    ((q + q.inv()) / (q - q.inv()).powi(2)).powi(inst.n() as i32)
}

/// `Q(u) = prod_i b(u/u_i) b(q u u_i)`, the inverse of `G(u, u)`.
pub fn q_function(u: C64, us: &[C64], inst: &ModelInstance) -> C64 {
    us.iter().fold(ONE, |acc, &x| acc * inst.b_quot(u, x) * inst.b(inst.q * u * x))
}

fn q_poly_from_roots(us: &[C64], inst: &ModelInstance) -> CPolyU {
    let mut coeffs = vec![q_normalisation(inst)];
    for &x in us {
        let r = inst.u_var(x);
        let mut next = vec![ZERO; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    CPolyU::new(coeffs)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStrategy {
    pub seed: u64,
    pub newton_iterations: usize,
    pub exec: Exec,
}

impl Default for SolveStrategy {
    fn default() -> Self {
        Self {
            seed: 0,
            newton_iterations: 30,
            exec: Exec::default(),
        }
    }
}

/// One solved branch, with the oracle data it was extracted from.
#[derive(Debug, Clone, Serialize)]
pub struct BetheBranch {
    pub spectral: SpectralFunction,
    pub u0: C64,
    pub oracle_value: C64,
    #[serde(skip)]
    pub eigenvector: Vec<C64>,
    pub interpolation_residual: f64,
    pub tq_fit_residual: f64,
    pub bethe_residual: f64,
    pub refined: bool,
}

impl BetheBranch {
    pub fn roots(&self) -> &[C64] {
        self.spectral.roots.as_deref().unwrap_or(&[])
    }

    /// `Lambda_d + Lambda_g` from the roots.
    pub fn lambda_from_roots(&self, u: C64, inst: &ModelInstance) -> C64 {
        inst.lambda_d(u, self.roots()) + inst.lambda_g(u, self.roots())
    }
}

fn rayleigh(t: &CMatrix, x: &[C64]) -> C64 {
    vdot(x, &t.mul_vec(x)) / vdot(x, x)
}

fn min_gap(vals: &[C64]) -> f64 {
    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut g = f64::INFINITY;
    for i in 0..vals.len() {
        for j in 0..i {
            g = g.min((vals[i] - vals[j]).norm() / scale);
        }
    }
    g
}

/// All eigenvalue branches with Bethe roots: spectrum of `t(u0)`, eigenvalue
/// polynomials by Rayleigh quotients, `Q` from the inhomogeneous T-Q
/// relation, roots of `Q` refined by Newton on the Bethe equations.
pub fn solve_bethe(inst: &ModelInstance, strategy: &SolveStrategy) -> Result<Vec<BetheBranch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
    let mut spectrum = None;
    for _ in 0..=RESAMPLE_RETRIES {
        let u0 = random_point(&mut rng);
        let pairs = eigenpairs(&transfer_raw(u0, inst))?;
        let vals: Vec<C64> = pairs.iter().map(|p| p.0).collect();
        if inst.dim() == 1 || min_gap(&vals) >= 1e-6 {
            spectrum = Some((u0, pairs));
            break;
        }
    }
    let (u0, pairs) = spectrum.ok_or_else(|| Error::Conditioning("no simple spectrum at sampled points".into()))?;

    let n = inst.n();
    let nodes = circle_nodes(n + 3, ZERO, 1.5, 0.3, inst.q);
    let node_t: Vec<CMatrix> = nodes.iter().map(|&u| transfer_raw(u, inst)).collect();
    let seeds: Vec<(usize, u64)> = (0..pairs.len()).map(|k| (k, strategy.seed ^ (0x9e37 + k as u64))).collect();

    let solved = strategy.exec.map(&seeds, |&(k, s)| {
        let (val, x) = &pairs[k];
        solve_branch(inst, strategy, u0, *val, x, &nodes, &node_t, s)
    });
    let mut out: Vec<BetheBranch> = Vec::new();
    for br in solved {
        let br = br?;
        let dup = out.iter().any(|o| {
            let a = &o.spectral.lambda.coeffs;
            let b = &br.spectral.lambda.coeffs;
            let scale = a.iter().chain(b).map(|z| z.norm()).fold(0.0, f64::max);
            a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-6 * scale)
        });
        if !dup {
            out.push(br);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn solve_branch(
    inst: &ModelInstance,
    strategy: &SolveStrategy,
    u0: C64,
    oracle_value: C64,
    x: &[C64],
    nodes: &[C64],
    node_t: &[CMatrix],
    seed: u64,
) -> Result<BetheBranch> {
    let n = inst.n();
    let q = inst.q;
    let samples: Vec<(C64, C64)> = nodes.iter().zip(node_t).map(|(&u, t)| (u, rayleigh(t, x))).collect();
    let interp = interpolate_in_u(&samples, n + 2, q)?;
    let lambda = interp.poly;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cn = q_normalisation(inst);
    let chi = inst.chi();
    let uq = |u: C64| inst.u_var(u);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    while rows.len() < 2 * n + 4 {
        let u = random_point(&mut rng);
        let cu = inst.cross(u);
        let (l, ps, pc) = (lambda.eval(u, q), inst.psi(u), inst.psi(cu));
        let (x0, x1, x2) = (uq(u), uq(u / q), uq(q * u));
        rows.push((0..n).map(|j| cn * (l * x0.powu(j as u32) - ps * x1.powu(j as u32) - pc * x2.powu(j as u32))).collect::<Vec<_>>());
        let top = cn * (l * x0.powu(n as u32) - ps * x1.powu(n as u32) - pc * x2.powu(n as u32));
        rhs.push(chi * inst.c(u) * inst.c(cu) * inst.lambda(u) * inst.lambda(cu) - top);
    }
    let mut roots0 = Vec::new();
    let mut tq_fit = 0.0;
    if n > 0 {
        let a = CMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        let ls = LeastSquares::new(&a)?;
        if ls.diag_ratio() < 1e-13 {
            return Err(Error::RankDeficient(format!("T-Q system, diagonal ratio {:e}", ls.diag_ratio())));
        }
        let sol = ls.solve(&rhs)?;
        tq_fit = sol.residual;
        let mut coeffs = sol.x.clone();
        coeffs.push(ONE);
        roots0 = CPolyU::new(coeffs).roots()?.into_iter().map(|r| canonical_preimage(r, q)).collect();
    }

    let (roots, refined, bethe_residual) = refine_roots(inst, roots0, strategy.newton_iterations);
    let q_poly = q_poly_from_roots(&roots, inst);
    Ok(BetheBranch {
        spectral: SpectralFunction {
            lambda,
            roots: Some(roots),
            q_poly: Some(q_poly),
        },
        u0,
        oracle_value,
        eigenvector: x.to_vec(),
        interpolation_residual: interp.residual,
        tq_fit_residual: tq_fit,
        bethe_residual,
        refined,
    })
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Newton on the Bethe equations with a central-difference Jacobian. Returns
/// the final roots, whether the refinement converged, and the residual.
fn refine_roots(inst: &ModelInstance, start: Vec<C64>, iterations: usize) -> (Vec<C64>, bool, f64) {
    let n = start.len();
    if n == 0 {
        return (start, true, 0.0);
    }
    let measure = |us: &[C64]| bethe_residuals(us, inst).map(|r| max_abs(&r)).unwrap_or(f64::INFINITY);
    let scales: Vec<f64> = raw_bethe(&start, inst).iter().map(|(a, b)| a.norm().max(b.norm()).max(1e-300)).collect();
    let f = |us: &[C64]| -> Vec<C64> {
        raw_bethe(us, inst).iter().zip(&scales).map(|((a, b), s)| (a + b) / *s).collect()
    };
    let mut us = start;
    let mut res = measure(&us);
    for _ in 0..iterations {
        if res <= 1e-14 {
            break;
        }
        let f0 = f(&us);
        let mut jac = CMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-6 * us[k].norm().max(1.0);
            let (mut up, mut dn) = (us.clone(), us.clone());
            up[k] += h;
            dn[k] -= h;
            let (fp, fm) = (f(&up), f(&dn));
            for r in 0..n {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let Ok(step) = solve(&jac, &f0.iter().map(|z| -z).collect::<Vec<_>>()) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..6 {
            let trial: Vec<C64> = us.iter().zip(&step).map(|(u, s)| u + s * t).collect();
            let r = measure(&trial);
            if r < res {
                us = trial;
                res = r;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let us: Vec<C64> = us.into_iter().map(|u| canonical_preimage(inst.u_var(u), inst.q)).collect();
    let res = measure(&us);
    (us, res <= 1e-9, res)
}

/// Largest relative violation of the inhomogeneous T-Q relation over 20
/// random points.
pub fn tq_residual(branch: &SpectralFunction, inst: &ModelInstance, seed: u64) -> Result<f64> {
    let us = branch.roots.as_ref().ok_or_else(|| Error::Config("branch carries no roots".into()))?;
    let q = inst.q;
    let chi = inst.chi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (_, r) = sample_point(&mut rng, |u| {
            if u.norm() <= POLE_MARGIN {
                return Err(singular("u", u.norm()));
            }
            let cu = inst.cross(u);
            let t = [
                branch.eval(u, q) * q_function(u, us, inst),
                inst.psi(u) * q_function(u / q, us, inst),
                inst.psi(cu) * q_function(q * u, us, inst),
                chi * inst.c(u) * inst.c(cu) * inst.lambda(u) * inst.lambda(cu),
            ];
            let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
            Ok(if scale == 0.0 { 0.0 } else { (t[0] - t[1] - t[2] - t[3]).norm() / scale })
        })?;
        worst = worst.max(r);
    }
    Ok(worst)
}
