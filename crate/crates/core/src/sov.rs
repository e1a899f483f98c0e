//! Separated-variables bases in the dl frame, their overlaps, and the
//! spectrum as the solution set of the quadratic system fixed by the
//! quantum determinant at the inhomogeneities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bethe::{ChainState, SpectralFunction, StateTag};
use crate::eigen::eigenpairs;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::functions::{random_point, FramePair, POLE_MARGIN};
use crate::gauge::{tensor_vectors, y_vec, yt_vec, Dynamical};
use crate::lattice::{leading_u_coefficient, sklyanin_rhs, t_at_i, t_at_one, transfer_raw};
use crate::linalg::{axpy_vec, norm, pair, scale_vec, solve, vdot, CMatrix, C64, ONE, ZERO};
use crate::params::{GaugeFrame, ModelInstance};
use crate::poly::{circle_nodes, interpolate_in_u};

/// All bit strings of length `n`, first site most significant.
pub fn bit_strings(n: usize) -> Vec<Vec<u8>> {
    (0..1usize << n)
        .map(|k| (0..n).map(|i| ((k >> (n - 1 - i)) & 1) as u8).collect())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SovLeftVector {
    pub covector: Vec<C64>,
    pub h: Vec<u8>,
    pub m: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SovRightVector {
    pub vector: Vec<C64>,
    pub h: Vec<u8>,
    pub m: i32,
}

/// The dl frame for full-length strings at `m0` together with the dr
/// vacuum, shared by every SoV construction.
#[derive(Debug, Clone)]
pub struct SovBasis<'a> {
    pub inst: &'a ModelInstance,
    pub pair: FramePair<'a>,
    pub m0: i32,
    dressing: Vec<Dynamical<'a>>,
    dressing_inv: Vec<Dynamical<'a>>,
}

impl<'a> SovBasis<'a> {
    pub fn new(inst: &'a ModelInstance, m0: i32) -> Result<Self> {
        let pair = FramePair::new(inst, m0, inst.n())?;
        Ok(Self {
            inst,
            m0,
            dressing: inst.v.iter().map(|&v| Dynamical::new(inst, &pair.dl, v)).collect(),
            dressing_inv: inst.v.iter().map(|&v| Dynamical::new(inst, &pair.dl, v.inv())).collect(),
            pair,
        })
    }

    pub fn frame(&self) -> &GaugeFrame {
        &self.pair.dl
    }

    fn check(&self, m: i32) -> Result<()> {
        let n = self.inst.n() as i32;
        for k in m - n - 2..=m + n + 3 {
            self.frame().gamma_checked(k)?;
        }
        Ok(())
    }

    /// `<Omega_m| = (x) <Y~(v_n, m + n)|`.
    pub fn left_vacuum(&self, m: i32) -> Vec<C64> {
        let f = self.frame();
        let cs: Vec<[C64; 2]> = self.inst.v.iter().enumerate().map(|(i, &v)| yt_vec(f, v, m + i as i32 + 1)).collect();
        tensor_vectors(&cs)
    }

    /// `|Omega_m> = (x) |Y(v_n, m - n)>`.
    pub fn right_vacuum(&self, m: i32) -> Vec<C64> {
        let f = self.frame();
        let cs: Vec<[C64; 2]> = self.inst.v.iter().enumerate().map(|(i, &v)| y_vec(f, v, m - i as i32 - 1)).collect();
        tensor_vectors(&cs)
    }

    pub fn left(&self, h: &[u8], m: i32) -> Result<SovLeftVector> {
        self.check_bits(h)?;
        self.check(m)?;
        let mut w = self.left_vacuum(m);
        for (i, &hi) in h.iter().enumerate() {
            if hi == 1 {
                w = self.dressing_inv[i].a(m + 2).left_mul_vec(&w);
            }
        }
        Ok(SovLeftVector {
            covector: w,
            h: h.to_vec(),
            m,
        })
    }

    /// Right state dressed by the bare sandwich `<X~(v_i, m+2)| K |Y(v_i^-1, m)>`
    /// for every `h_i = 0`, last site applied first.
    pub fn right(&self, h: &[u8], m: i32) -> Result<SovRightVector> {
        self.check_bits(h)?;
        self.check(m)?;
        let mut w = self.right_vacuum(m);
        for i in (0..h.len()).rev() {
            if h[i] == 0 {
                w = self.dressing[i].d_bare(m).mul_vec(&w);
            }
        }
        Ok(SovRightVector {
            vector: w,
            h: h.to_vec(),
            m,
        })
    }

    fn check_bits(&self, h: &[u8]) -> Result<()> {
        if h.len() != self.inst.n() || h.iter().any(|&b| b > 1) {
            return Err(Error::Shape(format!("bit string {h:?} for {} sites", self.inst.n())));
        }
        Ok(())
    }

    /// `|Omega_m0>` in the dr frame.
    pub fn omega(&self) -> Vec<C64> {
        crate::bethe::highest_weight_vector(self.inst, self.m0)
            .map(|s| s.amplitudes)
            .unwrap_or_default()
    }

    /// Gram matrix `<left(h, m)|right(k, m + 2)>`, rows `h`, columns `k`.
    pub fn gram(&self, m: i32) -> Result<CMatrix> {
        let hs = bit_strings(self.inst.n());
        let ls = hs.iter().map(|h| self.left(h, m)).collect::<Result<Vec<_>>>()?;
        let rs = hs.iter().map(|h| self.right(h, m + 2)).collect::<Result<Vec<_>>>()?;
        Ok(CMatrix::from_fn(hs.len(), hs.len(), |r, c| pair(&ls[r].covector, &rs[c].vector)))
    }

    /// The stacked left vectors as rows.
    pub fn left_matrix(&self, m: i32) -> Result<CMatrix> {
        let hs = bit_strings(self.inst.n());
        let ls = hs.iter().map(|h| self.left(h, m)).collect::<Result<Vec<_>>>()?;
        Ok(CMatrix::from_fn(hs.len(), self.inst.dim(), |r, c| ls[r].covector[c]))
    }
}

pub fn left_sov_vector(h: &[u8], m: i32, m0: i32, inst: &ModelInstance) -> Result<SovLeftVector> {
    SovBasis::new(inst, m0)?.left(h, m)
}

pub fn right_sov_state(h: &[u8], m: i32, m0: i32, inst: &ModelInstance) -> Result<SovRightVector> {
    SovBasis::new(inst, m0)?.right(h, m)
}

fn rel_cs(lhs: &[C64], rhs: &[C64]) -> f64 {
    let mut d = lhs.to_vec();
    axpy_vec(&mut d, -ONE, rhs);
    norm(&d) / norm(lhs).max(norm(rhs)).max(f64::MIN_POSITIVE)
}

/// Residuals of the left and right pseudo-eigen relations under `B_dl(u, m)`.
pub fn pseudo_eigen_residuals(u: C64, h: &[u8], m: i32, basis: &SovBasis) -> Result<(f64, f64)> {
    let inst = basis.inst;
    let f = basis.frame();
    let dy = Dynamical::new(inst, f, u);
    let l = basis.left(h, m)?;
    let l2 = basis.left(h, m - 2)?;
    let el = f.eta_n(inst, m) * inst.lambda_b(u) * inst.f_dress_left(u, h);
    let left = rel_cs(&dy.b(m).left_mul_vec(&l.covector), &scale_vec(&l2.covector, el));
    let r = basis.right(h, m)?;
    let r2 = basis.right(h, m + 2)?;
    let er = f.eta_nt(inst, m) * inst.lambda_bt(u) * inst.f_dress_right(u, h);
    let right = rel_cs(&dy.b(m).mul_vec(&r.vector), &scale_vec(&r2.vector, er));
    Ok((left, right))
}

/// Largest off-diagonal Gram entry over the largest diagonal one, and the
/// worst relative gap between the Gram diagonal and the closed-form measure.
pub fn biorthogonality(m: i32, basis: &SovBasis) -> Result<(f64, f64)> {
    let g = basis.gram(m)?;
    let hs = bit_strings(basis.inst.n());
    let mut diag: f64 = 0.0;
    let mut off: f64 = 0.0;
    let mut mu_err: f64 = 0.0;
    for (r, h) in hs.iter().enumerate() {
        for c in 0..hs.len() {
            if r == c {
                diag = diag.max(g[(r, c)].norm());
                let mu = basis.frame().mu_n(basis.inst, h, m);
                mu_err = mu_err.max((g[(r, c)] - mu).norm() / mu.norm().max(g[(r, c)].norm()));
            } else {
                off = off.max(g[(r, c)].norm());
            }
        }
    }
    Ok((off / diag, mu_err))
}

/// Overlap `<Omega_m|Omega_m0>`: closed form and direct inner product.
pub fn vacuum_overlap(m: i32, m0: i32, inst: &ModelInstance) -> Result<(C64, C64)> {
    let basis = SovBasis::new(inst, m0)?;
    let n = inst.n() as i32;
    for k in m + 2..=m + n + 1 {
        basis.frame().gamma_checked(k)?;
    }
    let formula = basis.pair.vacuum_overlap_formula(m);
    let direct = pair(&basis.left_vacuum(m), &basis.omega());
    Ok((formula, direct))
}

/// `<left(h, m)|Omega> = W(h) <Omega_m|Omega>` relative residual.
pub fn overlap_weight_residual(h: &[u8], m: i32, basis: &SovBasis) -> Result<f64> {
    let om = basis.omega();
    let lhs = pair(&basis.left(h, m)?.covector, &om);
    let rhs = basis.inst.w_weight(h) * pair(&basis.left_vacuum(m), &om);
    Ok((lhs - rhs).norm() / lhs.norm().max(rhs.norm()))
}

/// `eta-hat eta^N_{m0-2} <Omega_{m0-4}|Omega> / <Omega_{m0-2}|Omega> + chi`,
/// relative to `chi`.
pub fn chi_identity_residual(inst: &ModelInstance, m0: i32) -> Result<f64> {
    let basis = SovBasis::new(inst, m0)?;
    let om = basis.omega();
    let ratio = pair(&basis.left_vacuum(m0 - 4), &om) / pair(&basis.left_vacuum(m0 - 2), &om);
    let val = basis.pair.eta_hat() * basis.frame().eta_n(inst, m0 - 2) * ratio;
    let chi = inst.chi();
    Ok((val + chi).norm() / chi.norm().max(val.norm()))
}

fn string_on_omega(basis: &SovBasis, us: &[C64], m: i32) -> Vec<C64> {
    let len = us.len() as i32;
    let mut w = basis.omega();
    for (j, &u) in us.iter().enumerate().rev() {
        w = Dynamical::new(basis.inst, basis.frame(), u).b(m + 2 * (len - 1 - j as i32)).mul_vec(&w);
    }
    w
}

fn cs_residual(lhs: C64, rhs: C64, cov: &[C64], vec: &[C64]) -> f64 {
    let scale = (norm(cov) * norm(vec)).max(rhs.norm()).max(f64::MIN_POSITIVE);
    (lhs - rhs).norm() / scale
}

/// Residuals of the two projection formulas of left SoV vectors against
/// strings on `|Omega>`, each relative to the Cauchy-Schwarz bound.
pub fn projection_check(u: C64, us: &[C64], h: &[u8], inst: &ModelInstance, m0: i32) -> Result<(f64, f64)> {
    let n = inst.n();
    if us.len() != n {
        return Err(Error::Shape(format!("{} roots, expected {n}", us.len())));
    }
    let basis = SovBasis::new(inst, m0)?;
    let f = basis.frame();
    let ni = n as i32;
    let w = basis.left(h, m0 + 2 * (ni - 1))?.covector;
    let om = basis.omega();
    let ov = |m: i32| pair(&basis.left_vacuum(m), &om);
    let fu = |x: C64| inst.f_dress_left(x, h);
    let wh = inst.w_weight(h);

    let mut all: Vec<C64> = us.to_vec();
    all.push(u);
    let v1 = string_on_omega(&basis, &all, m0 - 2);
    let etas1 = (1..=ni + 1).fold(ONE, |acc, i| acc * f.eta_n(inst, m0 + 2 * (ni - i)));
    let r1 = all.iter().fold(ONE, |acc, &x| acc * inst.lambda_b(x) * fu(x)) * wh * etas1 * ov(m0 - 4);
    let p1 = cs_residual(pair(&w, &v1), r1, &w, &v1);

    let etas2 = (1..=ni).fold(ONE, |acc, i| acc * f.eta_n(inst, m0 + 2 * (ni - i)));
    let mut p2: f64 = 0.0;
    for j in 0..n {
        let mut s: Vec<C64> = crate::functions::without(us, j);
        s.push(u);
        let v2 = string_on_omega(&basis, &s, m0);
        let r2 = s.iter().fold(ONE, |acc, &x| acc * inst.lambda_b(x) * fu(x)) * wh * etas2 * ov(m0 - 2);
        p2 = p2.max(cs_residual(pair(&w, &v2), r2, &w, &v2));
    }
    Ok((p1, p2))
}

/// Quadratic system for `x_j = Lambda(v_j)`:
/// `x_i (sum_j G_ij x_j + f_i) = r_i` with `G_ij = g_j(v_i / q)`.
#[derive(Debug, Clone)]
pub struct SovSystem<'a> {
    pub inst: &'a ModelInstance,
    uv: Vec<C64>,
    t1: C64,
    ti: C64,
    lead: C64,
    pub g: CMatrix,
    pub f: Vec<C64>,
    pub r: Vec<C64>,
}

impl<'a> SovSystem<'a> {
    pub fn new(inst: &'a ModelInstance) -> Result<Self> {
        let n = inst.n();
        let uv: Vec<C64> = inst.v.iter().map(|&v| inst.u_var(v)).collect();
        for (j, &x) in uv.iter().enumerate() {
            if (x * x - ONE).norm() <= 1e-10 {
                return Err(Error::Genericity(format!("U(v_{}) = ±1", j + 1)));
            }
        }
        let mut sys = Self {
            inst,
            uv,
            t1: t_at_one(inst),
            ti: t_at_i(inst),
            lead: leading_u_coefficient(inst),
            g: CMatrix::zeros(n, n),
            f: vec![ZERO; n],
            r: vec![ZERO; n],
        };
        for i in 0..n {
            let p = inst.v[i] / inst.q;
            for j in 0..n {
                sys.g[(i, j)] = sys.g_fn(j, p);
            }
            sys.f[i] = sys.f_fn(p);
            sys.r[i] = sklyanin_rhs(inst, inst.v[i])?;
        }
        Ok(sys)
    }

    /// Lagrange-type basis `g_j(u)`, vanishing at `U = ±1` and the other `U_k`.
    pub fn g_fn(&self, j: usize, u: C64) -> C64 {
        let x = self.inst.u_var(u);
        let uj = self.uv[j];
        let mut out = (x * x - ONE) / (uj * uj - ONE);
        for (k, &uk) in self.uv.iter().enumerate() {
            if k != j {
                out *= (x - uk) / (uj - uk);
            }
        }
        out
    }

    /// Part of `Lambda` fixed by the values at `U = ±1` and the leading term.
    pub fn f_fn(&self, u: C64) -> C64 {
        let x = self.inst.u_var(u);
        let (mut p1, mut pi, mut pl) = (ONE, ONE, ONE);
        for &uk in &self.uv {
            p1 *= (x - uk) / (ONE - uk);
            pi *= (uk - x) / (ONE + uk);
            pl *= x - uk;
        }
        self.t1 * (x + ONE) / 2.0 * p1 + self.ti * (x - ONE) / (-2.0) * pi + self.lead * (x * x - ONE) * pl
    }

    pub fn lambda(&self, xs: &[C64], u: C64) -> C64 {
        xs.iter().enumerate().fold(self.f_fn(u), |acc, (j, &x)| acc + x * self.g_fn(j, u))
    }

    /// Off-diagonal couplings scaled by `s`.
    fn residual(&self, xs: &[C64], s: C64) -> Vec<C64> {
        let n = xs.len();
        (0..n)
            .map(|i| {
                let mut l = self.f[i] + self.g[(i, i)] * xs[i];
                for j in 0..n {
                    if j != i {
                        l += s * self.g[(i, j)] * xs[j];
                    }
                }
                xs[i] * l - self.r[i]
            })
            .collect()
    }

    fn jacobian(&self, xs: &[C64], s: C64) -> CMatrix {
        let n = xs.len();
        let coup = |i: usize, j: usize| if i == j { self.g[(i, j)] } else { s * self.g[(i, j)] };
        CMatrix::from_fn(n, n, |i, k| {
            let mut d = xs[i] * coup(i, k);
            if i == k {
                d += self.f[i] + (0..n).map(|j| coup(i, j) * xs[j]).sum::<C64>();
            }
            d
        })
    }

    /// `dH/ds`.
    fn ds(&self, xs: &[C64]) -> Vec<C64> {
        let n = xs.len();
        (0..n)
            .map(|i| xs[i] * (0..n).filter(|&j| j != i).map(|j| self.g[(i, j)] * xs[j]).sum::<C64>())
            .collect()
    }

    /// Relative residual of the full system.
    pub fn relative_residual(&self, xs: &[C64]) -> f64 {
        let res = self.residual(xs, ONE);
        res.iter()
            .zip(&self.r)
            .map(|(e, r)| e.norm() / r.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    fn newton(&self, xs: &mut [C64], s: C64, iterations: usize, tol: f64) -> bool {
        for _ in 0..iterations {
            let res = self.residual(xs, s);
            let Ok(step) = solve(&self.jacobian(xs, s), &res.iter().map(|z| -z).collect::<Vec<_>>()) else {
                return false;
            };
            let scale = norm(xs).max(1e-300);
            for (x, d) in xs.iter_mut().zip(&step) {
                *x += d;
            }
            if !xs.iter().all(|z| z.is_finite()) {
                return false;
            }
            if norm(&step) <= tol * scale {
                return true;
            }
        }
        false
    }

    /// Start solutions of the decoupled system `x_i (G_ii x_i + f_i) = r_i`.
    pub fn start_solutions(&self) -> Vec<Vec<C64>> {
        let n = self.f.len();
        let per: Vec<[C64; 2]> = (0..n)
            .map(|i| {
                let (a, b, c) = (self.g[(i, i)], self.f[i], -self.r[i]);
                quadratic_roots(a, b, c)
            })
            .collect();
        bit_strings(n)
            .into_iter()
            .map(|bits| bits.iter().enumerate().map(|(i, &b)| per[i][b as usize]).collect())
            .collect()
    }

    /// Tracks one start solution from `s = 0` to `s = 1` along
    /// `s(t) = t + i k t (1 - t)`, predictor-corrector with adaptive steps.
    pub fn track(&self, start: &[C64], kink: f64, path: usize) -> Result<Vec<C64>> {
        self.track_with(start, kink, path, 1.0 / 20.0)
    }

    /// [`Self::track`] with the largest step in `t` set to `max_dt`. A step is
    /// accepted only if the corrector lands close to the predicted point,
    /// which guards against jumping to a neighbouring path.
    pub fn track_with(&self, start: &[C64], kink: f64, path: usize, max_dt: f64) -> Result<Vec<C64>> {
        let s_of = |t: f64| C64::new(t, kink * t * (1.0 - t));
        let ds_dt = |t: f64| C64::new(1.0, kink * (1.0 - 2.0 * t));
        let mut xs = start.to_vec();
        let mut t: f64 = 0.0;
        let mut dt: f64 = max_dt;
        while t < 1.0 {
            let step = dt.min(1.0 - t);
            // Euler predictor
            let jac = self.jacobian(&xs, s_of(t));
            let rhs: Vec<C64> = self.ds(&xs).iter().map(|z| -z * ds_dt(t)).collect();
            let Ok(vel) = solve(&jac, &rhs) else {
                return Err(Error::PathFailure { path, s: t });
            };
            let pred: Vec<C64> = xs.iter().zip(&vel).map(|(x, v)| x + v * step).collect();
            let mut trial = pred.clone();
            let converged = self.newton(&mut trial, s_of(t + step), 6, 1e-11);
            if converged && rel_jump(&xs, &trial) < 0.3 && rel_jump(&pred, &trial) < 0.05 {
                xs = trial;
                t += step;
                if step == dt {
                    dt = (dt * 1.5).min(max_dt);
                }
            } else {
                dt *= 0.5;
                if dt < 1e-7 {
                    return Err(Error::PathFailure { path, s: t });
                }
            }
        }
        if !self.newton(&mut xs, ONE, 30, 1e-15) && self.relative_residual(&xs) > 1e-10 {
            return Err(Error::PathFailure { path, s: 1.0 });
        }
        Ok(xs)
    }

    /// Interpolated `Lambda` for a solution.
    pub fn spectral_function(&self, xs: &[C64]) -> Result<SpectralFunction> {
        let n = self.inst.n();
        let nodes = circle_nodes(n + 3, ZERO, 1.5, 0.1, self.inst.q);
        let pts: Vec<(C64, C64)> = nodes.iter().map(|&u| (u, self.lambda(xs, u))).collect();
        Ok(SpectralFunction {
            lambda: interpolate_in_u(&pts, n + 2, self.inst.q)?.poly,
            roots: None,
            q_poly: None,
        })
    }
}

fn same_point(a: &[C64], b: &[C64]) -> bool {
    let mut d = a.to_vec();
    axpy_vec(&mut d, -ONE, b);
    norm(&d) <= 1e-8 * norm(a).max(norm(b))
}

/// Indices of tracked endpoints that coincide with another endpoint.
fn colliding(ends: &[Result<Vec<C64>>]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, a) in ends.iter().enumerate() {
        let Ok(a) = a else { continue };
        let hit = ends
            .iter()
            .enumerate()
            .any(|(j, b)| j != i && matches!(b, Ok(b) if same_point(a, b)));
        if hit {
            out.push(i);
        }
    }
    out
}

fn rel_jump(a: &[C64], b: &[C64]) -> f64 {
    let mut d = a.to_vec();
    axpy_vec(&mut d, -ONE, b);
    norm(&d) / norm(a).max(1e-300)
}

/// Roots of `a x^2 + b x + c` by the stable formula.
fn quadratic_roots(a: C64, b: C64, c: C64) -> [C64; 2] {
    let disc = (b * b - 4.0 * a * c).sqrt();
    let sgn = if (b.conj() * disc).re >= 0.0 { 1.0 } else { -1.0 };
    let big = -(b + disc * sgn) / 2.0;
    if a.norm() == 0.0 {
        return [-c / b, -c / b];
    }
    if big.norm() == 0.0 {
        return [ZERO, ZERO];
    }
    [big / a, c / big]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SovSeeding {
    /// Newton at full coupling from `Lambda(v_j)` of the transfer-matrix
    /// eigenvectors.
    Oracle { seed: u64 },
    /// Continuation from the decoupled system over all `2^N` start points.
    Homotopy { seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SovBranch {
    pub values: Vec<C64>,
    pub spectral: SpectralFunction,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SovSpectrum {
    pub branches: Vec<SovBranch>,
    pub path_failures: Vec<(usize, String)>,
    pub merged: usize,
}

/// Solutions of the quadratic system, each as an interpolated `Lambda`.
pub fn sov_spectrum(inst: &ModelInstance, seeding: SovSeeding, exec: Exec) -> Result<SovSpectrum> {
    let sys = SovSystem::new(inst)?;
    let n = inst.n();
    let mut failures = Vec::new();
    let mut sols: Vec<Vec<C64>> = Vec::new();
    if n == 0 {
        sols.push(Vec::new());
    } else if n == 1 {
        sols.extend(quadratic_roots(sys.g[(0, 0)], sys.f[0], -sys.r[0]).iter().map(|&x| vec![x]));
    } else {
        match seeding {
            SovSeeding::Oracle { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u0 = random_point(&mut rng);
                let pairs = eigenpairs(&transfer_raw(u0, inst))?;
                let tv: Vec<CMatrix> = inst.v.iter().map(|&v| transfer_raw(v, inst)).collect();
                let out = exec.map(&pairs, |(_, x)| {
                    let mut xs: Vec<C64> = tv.iter().map(|t| vdot(x, &t.mul_vec(x)) / vdot(x, x)).collect();
                    sys.newton(&mut xs, ONE, 30, 1e-15);
                    xs
                });
                sols.extend(out);
            }
            SovSeeding::Homotopy { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let kink = rng.gen_range(0.3..0.9) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let starts: Vec<(usize, Vec<C64>)> = sys.start_solutions().into_iter().enumerate().collect();
                let mut ends: Vec<Result<Vec<C64>>> = exec.map(&starts, |(k, s)| sys.track(s, kink, *k));
                // paths that meet at s = 1 have jumped: retrack them finer
                // along the mirrored detour
                for round in 1..=2 {
                    let suspects = colliding(&ends);
                    if suspects.is_empty() {
                        break;
                    }
                    let max_dt = 1.0 / (20.0 * 8f64.powi(round));
                    let sign = if round % 2 == 1 { -1.0 } else { 1.0 };
                    let redo = exec.map(&suspects, |&k| sys.track_with(&starts[k].1, sign * kink, k, max_dt));
                    for (k, r) in suspects.into_iter().zip(redo) {
                        ends[k] = r;
                    }
                }
                for (k, r) in ends.into_iter().enumerate() {
                    match r {
                        Ok(xs) => sols.push(xs),
                        Err(e) => failures.push((k, e.to_string())),
                    }
                }
            }
        }
    }
    let mut branches: Vec<SovBranch> = Vec::new();
    let mut merged = 0;
    for xs in sols {
        let dup = branches.iter().any(|b| same_point(&b.values, &xs));
        if dup {
            merged += 1;
            continue;
        }
        branches.push(SovBranch {
            residual: if n == 0 { 0.0 } else { sys.relative_residual(&xs) },
            spectral: sys.spectral_function(&xs)?,
            values: xs,
        });
    }
    Ok(SovSpectrum {
        branches,
        path_failures: failures,
        merged,
    })
}

/// `|Phi>` as the measure-weighted sum of right SoV states at level
/// `m0 + 2N`, for the eigenvalue branch `Lambda`.
pub fn sov_eigenstate(branch: &SpectralFunction, m0: i32, inst: &ModelInstance) -> Result<ChainState> {
    let basis = SovBasis::new(inst, m0)?;
    let n = inst.n() as i32;
    let m = m0 + 2 * (n - 1);
    let hs = bit_strings(inst.n());
    let mus: Vec<C64> = hs.iter().map(|h| basis.frame().mu_n(inst, h, m)).collect();
    let mu_max = mus.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let weights: Vec<C64> = inst
        .v
        .iter()
        .map(|&v| {
            let vi = v.inv();
            branch.eval(vi, inst.q) / (v * inst.kt_plus(vi) * inst.phi(vi))
        })
        .collect();
    let mut phi = vec![ZERO; inst.dim()];
    for (h, &mu) in hs.iter().zip(&mus) {
        if mu.norm() <= 1e-12 * mu_max || mu.norm() <= POLE_MARGIN * 1e-200 {
            return Err(Error::MeasureDegeneracy(format!("mu({h:?}) = {:e}", mu.norm())));
        }
        let w = h.iter().zip(&weights).fold(ONE / mu, |acc, (&b, &x)| if b == 1 { acc * x } else { acc });
        axpy_vec(&mut phi, w, &basis.right(h, m + 2)?.vector);
    }
    Ok(ChainState::new(phi, StateTag::Eigen))
}

/// `(c, |a - c b| / |a|)` with `c` the least-squares scalar.
pub fn collinearity(a: &[C64], b: &[C64]) -> (C64, f64) {
    let c = vdot(b, a) / vdot(b, b);
    let mut d = a.to_vec();
    axpy_vec(&mut d, -c, b);
    (c, norm(&d) / norm(a))
}

/// `|t(u) v - lambda v| / (|t(u)| |v|)`.
pub fn eigen_residual(v: &[C64], lambda: C64, u: C64, inst: &ModelInstance) -> f64 {
    let t = transfer_raw(u, inst);
    let mut d = t.mul_vec(v);
    axpy_vec(&mut d, -lambda, v);
    norm(&d) / (t.frobenius() * norm(v)).max(lambda.norm() * norm(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bethe::{bethe_vector, solve_bethe, SolveStrategy};
    use crate::linalg::singular_values;
    use crate::params::sample_generic;

    fn setup(n: usize, seed: u64) -> ModelInstance {
        sample_generic(seed, n).unwrap()
    }

    #[test]
    fn bare_vectors() {
        let inst = setup(2, 1);
        let b = SovBasis::new(&inst, 0).unwrap();
        assert_eq!(b.left(&[0, 0], 2).unwrap().covector, b.left_vacuum(2));
        assert_eq!(b.right(&[1, 1], 2).unwrap().vector, b.right_vacuum(2));
    }

    #[test]
    fn pseudo_eigen_and_basis() {
        for n in 1..=3 {
            let inst = setup(n, 10 + n as u64);
            let b = SovBasis::new(&inst, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let u = random_point(&mut rng);
            for h in bit_strings(n) {
                for m in [0, 2] {
                    let (l, r) = pseudo_eigen_residuals(u, &h, m, &b).unwrap();
                    assert!(l <= 1e-10 && r <= 1e-10, "{n} {h:?} {m}: {l:e} {r:e}");
                }
                assert!(overlap_weight_residual(&h, 0, &b).unwrap() <= 1e-10);
            }
            let sv = singular_values(&b.left_matrix(0).unwrap());
            assert!(sv[sv.len() - 1] > 1e-6 * sv[0]);
        }
    }

    #[test]
    fn gram_and_measure() {
        for n in 1..=3 {
            let inst = setup(n, 20 + n as u64);
            let b = SovBasis::new(&inst, 0).unwrap();
            for m in [0, 2 * n as i32 - 2] {
                let (off, mu) = biorthogonality(m, &b).unwrap();
                assert!(off <= 1e-10 && mu <= 1e-8, "{n} {m}: {off:e} {mu:e}");
            }
        }
    }

    #[test]
    fn vacuum_overlaps() {
        for n in 1..=4 {
            let inst = setup(n, 30 + n as u64);
            for m in [0, -2, -4, 3] {
                let (f, d) = vacuum_overlap(m, 0, &inst).unwrap();
                assert!((f - d).norm() <= 1e-12 * f.norm().max(d.norm()));
            }
            assert!(chi_identity_residual(&inst, 0).unwrap() <= 1e-10);
        }
        assert_eq!(setup(2, 1).w_weight(&[0, 0]), ONE);
    }

    #[test]
    fn projections() {
        for n in 1..=3 {
            let inst = setup(n, 40 + n as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let u = random_point(&mut rng);
            let us: Vec<C64> = (0..n).map(|_| random_point(&mut rng)).collect();
            for h in bit_strings(n) {
                let (a, b) = projection_check(u, &us, &h, &inst, 0).unwrap();
                assert!(a <= 1e-10 && b <= 1e-10, "{n} {h:?}: {a:e} {b:e}");
            }
        }
    }

    #[test]
    fn spectrum_single_site() {
        let inst = setup(1, 50);
        let sp = sov_spectrum(&inst, SovSeeding::Homotopy { seed: 1 }, Exec::Sequential).unwrap();
        assert_eq!(sp.branches.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_point(&mut rng);
        let ev = crate::eigen::eigenvalues(&transfer_raw(u, &inst)).unwrap();
        for br in &sp.branches {
            let l = br.spectral.eval(u, inst.q);
            assert!(ev.iter().any(|e| (e - l).norm() <= 1e-8 * e.norm()));
        }
    }

    #[test]
    fn spectrum_homotopy_matches_oracle() {
        for n in 2..=3 {
            let inst = setup(n, 60 + n as u64);
            let a = sov_spectrum(&inst, SovSeeding::Homotopy { seed: 2 }, Exec::Sequential).unwrap();
            let b = sov_spectrum(&inst, SovSeeding::Oracle { seed: 2 }, Exec::Sequential).unwrap();
            assert_eq!(a.branches.len(), 1 << n, "{:?}", a.path_failures);
            assert_eq!(b.branches.len(), 1 << n);
            for x in &a.branches {
                assert!(x.residual <= 1e-10);
                assert!(b.branches.iter().any(|y| {
                    let mut d = x.values.clone();
                    axpy_vec(&mut d, -ONE, &y.values);
                    norm(&d) <= 1e-8 * norm(&x.values)
                }));
            }
        }
    }

    #[test]
    fn eigenstate_matches_bethe_vector() {
        for n in 1..=2 {
            let inst = setup(n, 70 + n as u64);
            let branches = solve_bethe(&inst, &SolveStrategy::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            for br in &branches {
                let phi = sov_eigenstate(&br.spectral, 0, &inst).unwrap().amplitudes;
                let u = random_point(&mut rng);
                assert!(eigen_residual(&phi, br.spectral.eval(u, inst.q), u, &inst) <= 1e-8);
                let psi = bethe_vector(br.roots(), &inst, 0).unwrap().amplitudes;
                assert!(collinearity(&phi, &psi).1 <= 1e-7);
            }
        }
    }
}
