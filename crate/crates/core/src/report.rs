//! Run configuration, the check catalogue and the JSON-lines report.
//!
//! Checks are dispatched to a worker pool and buffered by index, so the
//! report is identical for any worker count apart from `elapsed_ms`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bethe::{
    bethe_residuals, bethe_vector, check_full_offshell, check_offshell_transfer, check_proposition1,
    highest_weight_actions, nilpotency_residual, off_diagonal_actions, solve_bethe, tq_residual, BetheBranch,
    SolveStrategy,
};
use crate::eigen::eigenvalues;
use crate::error::{Error, Result};
use crate::exec::{with_workers, Exec};
use crate::functions::{check_identity, random_point, Identity};
use crate::gauge::{check_commutation, check_linear_relations, gauge_vector_residual, gauged_transfer,
    modified_diagonal_residual};
use crate::lattice::{
    analytic_constraints, dual_reflection_residual, reflection_residual, sklyanin_relation, transfer_raw,
    yang_baxter_residual, AnalyticReport,
};
use crate::linalg::{rel_diff_mat, singular_values, C64};
use crate::params::{
    left_boundary_from_xi, right_boundary_from_mu, sample_constrained, sample_generic, ModelInstance, MAX_SITES,
};
use crate::sov::{
    biorthogonality, bit_strings, chi_identity_residual, collinearity, overlap_weight_residual,
    projection_check, pseudo_eigen_residuals, sov_eigenstate, sov_spectrum, vacuum_overlap, SovBasis,
    SovSeeding, SovSpectrum,
};

/// Draws retried when a random point lands on a pole.
const RETRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Algebra,
    Gauge,
    Bethe,
    Proposition1,
    Sov,
    Spectrum,
    Tq,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Algebra,
        Suite::Gauge,
        Suite::Bethe,
        Suite::Proposition1,
        Suite::Sov,
        Suite::Spectrum,
        Suite::Tq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Gauge => "gauge",
            Suite::Bethe => "bethe",
            Suite::Proposition1 => "proposition1",
            Suite::Sov => "sov",
            Suite::Spectrum => "spectrum",
            Suite::Tq => "tq",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeftSpec {
    pub kappa: C64,
    pub kappa_t: C64,
    pub xi: C64,
    pub xi_t: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RightSpec {
    pub tau: C64,
    pub tau_t: C64,
    pub mu: C64,
    pub mu_t: C64,
}

/// Either `seed` + `n` (optionally `constrained`) or the explicit
/// parameters `q`, `v`, `left`, `right`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<LeftSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<RightSpec>,
}

impl InstanceSpec {
    pub fn seeded(seed: u64, n: usize) -> Self {
        Self {
            seed: Some(seed),
            n: Some(n),
            ..Self::default()
        }
    }

    fn explicit(&self) -> bool {
        self.q.is_some() || self.v.is_some() || self.left.is_some() || self.right.is_some()
    }

    pub fn build(&self) -> Result<ModelInstance> {
        if self.explicit() {
            if self.constrained {
                return Err(Error::Config("instance: `constrained` only applies to seeded draws".into()));
            }
            let missing = |f: &str| Error::Config(format!("instance: explicit parameters need `{f}`"));
            let v = self.v.clone().ok_or_else(|| missing("v"))?;
            check_n(v.len(), "instance.v")?;
            if let Some(n) = self.n {
                if n != v.len() {
                    return Err(Error::Config(format!("instance.n = {n} but `v` has {} entries", v.len())));
                }
            }
            let l = self.left.ok_or_else(|| missing("left"))?;
            let r = self.right.ok_or_else(|| missing("right"))?;
            let q = self.q.ok_or_else(|| missing("q"))?;
            ModelInstance::new(
                q,
                v,
                left_boundary_from_xi(l.kappa, l.kappa_t, l.xi, l.xi_t)?,
                right_boundary_from_mu(r.tau, r.tau_t, r.mu, r.mu_t)?,
            )
        } else {
            let n = self.n.ok_or_else(|| Error::Config("instance: missing field `n`".into()))?;
            check_n(n, "instance.n")?;
            let seed = self.seed.unwrap_or(0);
            if self.constrained {
                sample_constrained(seed, n)
            } else {
                sample_generic(seed, n)
            }
        }
    }
}

fn check_n(n: usize, field: &str) -> Result<()> {
    if !(1..=MAX_SITES).contains(&n) {
        return Err(Error::Config(format!("{field}: N = {n} outside 1..={MAX_SITES}")));
    }
    Ok(())
}

fn default_suites() -> Vec<Suite> {
    Suite::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    #[serde(default = "default_suites")]
    pub suites: Vec<Suite>,
    /// Seed of the random evaluation points; defaults to the instance seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Overrides keyed by check name or suite name; the check name wins.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Global override applied when no keyed override matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<std::path::PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub m0: i32,
}

impl RunConfig {
    pub fn seeded(seed: u64, n: usize, suites: Vec<Suite>) -> Self {
        Self {
            instance: InstanceSpec::seeded(seed, n),
            suites,
            seed: None,
            tolerances: BTreeMap::new(),
            tol: None,
            out: None,
            workers: None,
            m0: 0,
        }
    }

    /// Parses and validates; syntax errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.suites.is_empty() {
            return Err(Error::Config("suites: empty suite list".into()));
        }
        if !self.instance.explicit() {
            check_n(self.instance.n.unwrap_or(0), "instance.n")?;
        }
        for (k, &t) in &self.tolerances {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("tolerances.{k}: {t} is not a positive number")));
            }
        }
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("tol: {t} is not a positive number")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn draw_seed(&self) -> u64 {
        self.seed.or(self.instance.seed).unwrap_or(0)
    }

    fn tolerance(&self, check: &str, suite: Suite, default: f64) -> f64 {
        self.tolerances
            .get(check)
            .or_else(|| self.tolerances.get(suite.name()))
            .copied()
            .or(self.tol)
            .unwrap_or(default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: Suite,
    pub check: String,
    pub anchor: String,
    pub n: usize,
    pub seed: u64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCount {
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub suites: BTreeMap<Suite, SuiteCount>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<CheckRecord>,
    pub summary: Summary,
}

impl RunReport {
    /// One record per line, then `{"summary": ...}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &serde_json::json!({ "summary": self.summary }))?;
        writeln!(w)
    }
}

type Job = Box<dyn Fn(&Context, &mut ChaCha8Rng) -> Result<f64> + Send + Sync>;

struct Check {
    suite: Suite,
    name: String,
    anchor: &'static str,
    tol: f64,
    job: Job,
}

fn check(
    suite: Suite,
    name: impl Into<String>,
    anchor: &'static str,
    tol: f64,
    job: impl Fn(&Context, &mut ChaCha8Rng) -> Result<f64> + Send + Sync + 'static,
) -> Check {
    Check {
        suite,
        name: name.into(),
        anchor,
        tol,
        job: Box::new(job),
    }
}

struct SpectrumData {
    bethe: Vec<BetheBranch>,
    sov: SovSpectrum,
    oracle_u: C64,
    oracle: Vec<C64>,
}

/// Shared state of one run; the spectrum is solved at most once.
struct Context {
    inst: ModelInstance,
    m0: i32,
    seed: u64,
    analytic: OnceLock<Result<AnalyticReport>>,
    spectrum: OnceLock<Result<SpectrumData>>,
}

impl Context {
    fn analytic(&self) -> Result<&AnalyticReport> {
        self.analytic
            .get_or_init(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0a11);
                let held: Vec<C64> = (0..5).map(|_| random_point(&mut rng)).collect();
                analytic_constraints(&self.inst, &held)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn spectrum(&self) -> Result<&SpectrumData> {
        self.spectrum
            .get_or_init(|| {
                let strategy = SolveStrategy {
                    seed: self.seed,
                    exec: Exec::Sequential,
                    ..SolveStrategy::default()
                };
                let bethe = solve_bethe(&self.inst, &strategy)?;
                let sov = sov_spectrum(&self.inst, SovSeeding::Homotopy { seed: self.seed }, Exec::Sequential)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x07ac1e);
                let oracle_u = random_point(&mut rng);
                let oracle = eigenvalues(&transfer_raw(oracle_u, &self.inst))?;
                Ok(SpectrumData {
                    bethe,
                    sov,
                    oracle_u,
                    oracle,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::Singularity { .. } | Error::GaugeDegeneracy { .. } | Error::CoincidentRoots(_)
    )
}

/// Runs `f` until it clears the poles, at most [`RETRIES`] times.
fn retrying(rng: &mut ChaCha8Rng, mut f: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> Result<f64> {
    let mut last = None;
    for _ in 0..RETRIES {
        match f(rng) {
            Ok(x) => return Ok(x),
            Err(e) if retryable(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(Error::Sampling(RETRIES)))
}

/// Largest residual over `draws` independent redraws.
fn sweep(
    rng: &mut ChaCha8Rng,
    draws: usize,
    mut f: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        worst = worst.max(retrying(rng, &mut f)?);
    }
    Ok(worst)
}

fn points(rng: &mut ChaCha8Rng, k: usize) -> Vec<C64> {
    (0..k).map(|_| random_point(rng)).collect()
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

/// Greedy one-to-one matching of `found` against `reference`; the largest
/// relative distance, or 1 when the counts differ.
pub fn match_spectra(reference: &[C64], found: &[C64]) -> f64 {
    if reference.len() != found.len() {
        return 1.0;
    }
    let scale = max_of(reference.iter().map(|z| z.norm())).max(f64::MIN_POSITIVE);
    let mut used = vec![false; found.len()];
    let mut worst: f64 = 0.0;
    for &e in reference {
        let best = (0..found.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (found[a] - e).norm().total_cmp(&(found[b] - e).norm()));
        match best {
            Some(j) => {
                used[j] = true;
                worst = worst.max((found[j] - e).norm() / scale);
            }
            None => return 1.0,
        }
    }
    worst
}

fn algebra_checks(n: usize) -> Vec<Check> {
    use Suite::Algebra as S;
    let mut v = vec![
        check(S, "yang_baxter", "Yang-Baxter equation of the six-vertex R-matrix", 1e-12, |c, rng| {
            sweep(rng, 20, |r| {
                let p = points(r, 3);
                yang_baxter_residual(p[0], p[1], p[2], c.inst.q)
            })
        }),
        check(S, "reflection", "reflection equation for the right boundary matrix", 1e-12, |c, rng| {
            sweep(rng, 20, |r| {
                let p = points(r, 2);
                reflection_residual(p[0], p[1], &c.inst)
            })
        }),
        check(S, "dual_reflection", "dual reflection equation for the left boundary matrix", 1e-12, |c, rng| {
            sweep(rng, 20, |r| {
                let p = points(r, 2);
                dual_reflection_residual(p[0], p[1], &c.inst)
            })
        }),
        check(S, "commuting_family", "commutativity of the double-row transfer matrices", 1e-11, |c, rng| {
            sweep(rng, 5, |r| {
                let p = points(r, 2);
                let (a, b) = (transfer_raw(p[0], &c.inst), transfer_raw(p[1], &c.inst));
                Ok(a.commutator(&b).frobenius() / (a.frobenius() * b.frobenius()))
            })
        }),
        check(S, "parity_crossing", "parity and crossing symmetry of the transfer matrix", 1e-11, |c, rng| {
            sweep(rng, 10, |r| {
                let u = random_point(r);
                let t = transfer_raw(u, &c.inst);
                Ok(rel_diff_mat(&transfer_raw(-u, &c.inst), &t)
                    .max(rel_diff_mat(&transfer_raw(c.inst.cross(u), &c.inst), &t)))
            })
        }),
        check(S, "t_at_one", "closed-form value of the transfer matrix at u = 1", 1e-10, |c, _| {
            Ok(c.analytic()?.t_one)
        }),
        check(S, "t_at_i", "closed-form value of the transfer matrix at u = i", 1e-10, |c, _| {
            Ok(c.analytic()?.t_i)
        }),
        check(S, "leading_asymptotics", "leading large-u coefficient of the transfer matrix", 1e-6, |c, _| {
            let a = c.analytic()?;
            Ok(a.leading_extrapolated.max(a.leading_interpolated))
        }),
        check(S, "polynomiality", "transfer matrix as a degree N+2 polynomial in U(u)", 1e-8, |c, _| {
            Ok(c.analytic()?.polynomial_holdout)
        }),
        check(S, "quantum_determinant", "quantum determinant at the inhomogeneities", 1e-9, |c, _| {
            let mut worst: f64 = 0.0;
            for i in 1..=c.inst.n() {
                worst = worst.max(sklyanin_relation(&c.inst, i)?);
            }
            Ok(worst)
        }),
    ];
    for (name, id, anchor) in [
        ("fr1", Identity::Fr1, "first dynamical rational identity"),
        ("fr2", Identity::Fr2, "second dynamical rational identity"),
        ("fr3", Identity::Fr3, "sum rule for the structure functions"),
    ] {
        v.push(check(S, name, anchor, 1e-10, move |c, rng| {
            let frame = c.inst.gauge_dl(c.m0, n)?;
            let mut worst: f64 = 0.0;
            for m_len in 1..=4 {
                worst = worst.max(sweep(rng, 3, |r| {
                    let us = points(r, m_len);
                    check_identity(id, &c.inst, &frame, c.m0 + 1, &us, random_point(r), &[])
                })?);
            }
            Ok(worst)
        }));
    }
    v
}

fn gauge_checks(n: usize) -> Vec<Check> {
    use Suite::Gauge as S;
    vec![
        check(S, "gauge_vectors", "scalar products and closure of the gauge vectors", 1e-12, move |c, rng| {
            let frames = [
                c.inst.gauge_dr(c.m0)?,
                c.inst.gauge_dl(c.m0, n)?,
                c.inst.gauge_generic(C64::new(0.4, 0.9), C64::new(1.2, -0.3), c.m0)?,
            ];
            let mut worst: f64 = 0.0;
            for f in &frames {
                for u in points(rng, 5) {
                    for m in c.m0 - 2..=c.m0 + 2 {
                        worst = worst.max(gauge_vector_residual(f, u, m));
                    }
                }
            }
            Ok(worst)
        }),
        check(S, "frame_independence", "gauge-frame independence of the reassembled transfer matrix", 1e-11,
            move |c, rng| {
                let frames = [
                    c.inst.gauge_dr(c.m0)?,
                    c.inst.gauge_dl(c.m0, n)?,
                    c.inst.gauge_generic(C64::new(-0.6, 0.5), C64::new(0.8, 0.8), c.m0)?,
                ];
                let mut worst: f64 = 0.0;
                for f in &frames {
                    worst = worst.max(sweep(rng, 3, |r| {
                        let u = random_point(r);
                        let mut w: f64 = 0.0;
                        for m in [c.m0, c.m0 + 1, c.m0 + 3] {
                            w = w.max(gauged_transfer(u, m, f, &c.inst)?.residual);
                        }
                        Ok(w)
                    })?);
                }
                Ok(worst)
            }),
        check(S, "exchange_relations", "exchange relations of the dynamical operators", 1e-11, move |c, rng| {
            let f = c.inst.gauge_dl(c.m0, n)?;
            sweep(rng, 20, |r| {
                let p = points(r, 2);
                let m = c.m0 + r.gen_range(-2..=1);
                Ok(max_of(check_commutation(p[0], p[1], m, &f, &c.inst)?))
            })
        }),
        check(S, "frame_linear_relations", "linear relations between the dr and dl operators", 1e-10,
            move |c, rng| {
                sweep(rng, 5, |r| {
                    let u = random_point(r);
                    let mut w: f64 = 0.0;
                    for (p, m) in [(0, 0), (1, 0), (2, 1), (0, 3)] {
                        let (a, d) = check_linear_relations(u, c.m0 + p, c.m0 + m, c.m0, n, &c.inst)?;
                        w = w.max(a).max(d);
                    }
                    Ok(w)
                })
            }),
        check(S, "highest_weight", "highest-weight actions on the gauged reference state", 1e-10, |c, rng| {
            sweep(rng, 5, |r| Ok(max_of(highest_weight_actions(random_point(r), &c.inst, c.m0)?)))
        }),
        check(S, "nilpotency", "nilpotency of N+1 dr creation operators", 1e-9, move |c, rng| {
            sweep(rng, 3, |r| nilpotency_residual(&points(r, n + 1), &c.inst, c.m0))
        }),
        check(S, "off_diagonal_actions", "off-diagonal actions of the dl operators on the reference state",
            1e-10, move |c, rng| {
                sweep(rng, 5, |r| {
                    let (a, d) = off_diagonal_actions(random_point(r), &c.inst, c.m0, n)?;
                    Ok(a.max(d))
                })
            }),
        check(S, "modified_diagonal", "modified-diagonal form of the transfer matrix in the dl frame", 1e-10,
            move |c, rng| {
                sweep(rng, 5, |r| {
                    let u = random_point(r);
                    let mut w: f64 = 0.0;
                    for m_len in 0..=n {
                        w = w.max(modified_diagonal_residual(u, c.m0, m_len, &c.inst)?);
                    }
                    Ok(w)
                })
            }),
    ]
}

fn bethe_checks(n: usize) -> Vec<Check> {
    use Suite::Bethe as S;
    vec![
        check(S, "offshell_modified", "off-shell action of the modified transfer matrix", 1e-9, move |c, rng| {
            let mut worst: f64 = 0.0;
            for m_len in 1..=n {
                worst = worst.max(sweep(rng, 5, |r| {
                    let us = points(r, m_len);
                    check_offshell_transfer(random_point(r), &us, &c.inst, c.m0)
                })?);
            }
            Ok(worst)
        }),
        check(S, "offshell_full", "full off-shell action of the transfer matrix on the Bethe vector", 1e-9,
            move |c, rng| {
                sweep(rng, 25, |r| {
                    let us = points(r, n);
                    check_full_offshell(random_point(r), &us, &c.inst, c.m0)
                })
            }),
    ]
}

fn proposition1_checks(n: usize) -> Vec<Check> {
    vec![check(
        Suite::Proposition1,
        "proposition1",
        "action of the N+1 creation string on the reference state",
        1e-9,
        move |c, rng| {
            sweep(rng, 25, |r| {
                let us = points(r, n);
                check_proposition1(random_point(r), &us, &c.inst, c.m0)
            })
        },
    )]
}

fn sov_checks(n: usize) -> Vec<Check> {
    use Suite::Sov as S;
    let hs = bit_strings(n);
    let levels = move |c: &Context| [c.m0, c.m0 + 2 * n as i32 - 2];
    let hs1 = hs.clone();
    let hs2 = hs.clone();
    let hs3 = hs.clone();
    let hs4 = hs.clone();
    vec![
        check(S, "pseudo_eigen", "pseudo-eigenbases of the dl creation operator", 1e-10, move |c, rng| {
            let basis = SovBasis::new(&c.inst, c.m0)?;
            sweep(rng, 2, |r| {
                let u = random_point(r);
                let mut w: f64 = 0.0;
                for h in &hs1 {
                    for m in [c.m0, c.m0 + 2] {
                        let (a, b) = pseudo_eigen_residuals(u, h, m, &basis)?;
                        w = w.max(a).max(b);
                    }
                }
                Ok(w)
            })
        }),
        check(S, "overlap_weights", "overlaps of the left SoV basis with the reference state", 1e-10,
            move |c, _| {
                let basis = SovBasis::new(&c.inst, c.m0)?;
                let mut worst: f64 = 0.0;
                for h in &hs2 {
                    worst = worst.max(overlap_weight_residual(h, c.m0, &basis)?);
                }
                Ok(worst)
            }),
        check(S, "biorthogonality", "biorthogonality of the left and right SoV bases", 1e-10, move |c, _| {
            let basis = SovBasis::new(&c.inst, c.m0)?;
            let mut worst: f64 = 0.0;
            for m in levels(c) {
                worst = worst.max(biorthogonality(m, &basis)?.0);
            }
            Ok(worst)
        }),
        check(S, "sov_measure", "closed-form SoV measure against the Gram diagonal", 1e-8, move |c, _| {
            let basis = SovBasis::new(&c.inst, c.m0)?;
            let mut worst: f64 = 0.0;
            for m in levels(c) {
                worst = worst.max(biorthogonality(m, &basis)?.1);
            }
            Ok(worst)
        }),
        check(S, "basis_condition", "completeness of the left SoV basis (condition number)", 1e6, |c, _| {
            let basis = SovBasis::new(&c.inst, c.m0)?;
            let sv = singular_values(&basis.left_matrix(c.m0)?);
            let smallest = sv.last().copied().unwrap_or(0.0);
            Ok(if smallest > 0.0 { sv[0] / smallest } else { f64::INFINITY })
        }),
        check(S, "vacuum_overlap", "closed form of the gauged vacuum overlaps", 1e-12, |c, _| {
            let mut worst: f64 = 0.0;
            for m in [c.m0, c.m0 - 2, c.m0 - 4, c.m0 + 3] {
                let (f, d) = vacuum_overlap(m, c.m0, &c.inst)?;
                worst = worst.max((f - d).norm() / f.norm().max(d.norm()));
            }
            Ok(worst)
        }),
        check(S, "chi_identity", "vacuum-overlap expression of the inhomogeneous coefficient", 1e-10, |c, _| {
            chi_identity_residual(&c.inst, c.m0)
        }),
        check(S, "projections", "projections of Bethe strings onto the left SoV basis", 1e-10, move |c, rng| {
            sweep(rng, 2, |r| {
                let u = random_point(r);
                let us = points(r, n);
                let mut w: f64 = 0.0;
                for h in &hs3 {
                    let (a, b) = projection_check(u, &us, h, &c.inst, c.m0)?;
                    w = w.max(a).max(b);
                }
                Ok(w)
            })
        }),
        check(S, "interpolation_identity", "off-shell interpolation identity over bit strings", 1e-10,
            move |c, rng| {
                let frame = c.inst.gauge_dl(c.m0, n)?;
                sweep(rng, 2, |r| {
                    let u = random_point(r);
                    let us = points(r, n);
                    let mut w: f64 = 0.0;
                    for h in &hs4 {
                        w = w.max(check_identity(Identity::OffshellBv4, &c.inst, &frame, c.m0, &us, u, h)?);
                    }
                    Ok(w)
                })
            }),
        check(S, "functional_system", "SoV functional system for the eigenvalue", 1e-10, move |c, rng| {
            let frame = c.inst.gauge_dl(c.m0, n)?;
            sweep(rng, 2, |r| {
                let u = random_point(r);
                let us = points(r, n);
                let mut w: f64 = 0.0;
                for h in &hs {
                    w = w.max(check_identity(Identity::FunctionalSystem1, &c.inst, &frame, c.m0, &us, u, h)?);
                }
                Ok(w)
            })
        }),
    ]
}

fn spectrum_checks(n: usize) -> Vec<Check> {
    use Suite::Spectrum as S;
    let full = 1usize << n;
    vec![
        check(S, "branch_count", "completeness of the Bethe and SoV spectra", 0.5, move |c, _| {
            let sp = c.spectrum()?;
            let dev = |k: usize| (k as f64 - full as f64).abs();
            Ok(dev(sp.bethe.len()).max(dev(sp.sov.branches.len())))
        }),
        check(S, "bethe_equations", "on-shell Bethe equations", 1e-8, |c, _| {
            let sp = c.spectrum()?;
            let mut worst: f64 = 0.0;
            for br in &sp.bethe {
                worst = worst.max(max_of(bethe_residuals(br.roots(), &c.inst)?.iter().map(|z| z.norm())));
            }
            Ok(worst)
        }),
        check(S, "bethe_vs_oracle", "Bethe eigenvalues against the transfer-matrix spectrum", 1e-7, |c, _| {
            let sp = c.spectrum()?;
            let vals: Vec<C64> = sp.bethe.iter().map(|b| b.lambda_from_roots(sp.oracle_u, &c.inst)).collect();
            Ok(match_spectra(&sp.oracle, &vals))
        }),
        check(S, "sov_vs_oracle", "SoV quadratic-system eigenvalues against the transfer-matrix spectrum",
            1e-7, |c, _| {
                let sp = c.spectrum()?;
                let vals: Vec<C64> =
                    sp.sov.branches.iter().map(|b| b.spectral.eval(sp.oracle_u, c.inst.q)).collect();
                Ok(match_spectra(&sp.oracle, &vals))
            }),
        check(S, "sov_state", "SoV eigenstate proportional to the on-shell Bethe vector", 1e-7, |c, _| {
            let sp = c.spectrum()?;
            let mut worst: f64 = 0.0;
            for br in &sp.bethe {
                let phi = sov_eigenstate(&br.spectral, c.m0, &c.inst)?.amplitudes;
                let psi = bethe_vector(br.roots(), &c.inst, c.m0)?.amplitudes;
                worst = worst.max(collinearity(&phi, &psi).1);
            }
            Ok(worst)
        }),
    ]
}

fn tq_checks() -> Vec<Check> {
    vec![check(Suite::Tq, "tq_relation", "inhomogeneous T-Q relation on every branch", 1e-8, |c, _| {
        let sp = c.spectrum()?;
        if sp.bethe.is_empty() {
            return Err(Error::RankDeficient("no branches".into()));
        }
        let mut worst: f64 = 0.0;
        for (k, br) in sp.bethe.iter().enumerate() {
            worst = worst.max(tq_residual(&br.spectral, &c.inst, c.seed ^ k as u64)?);
        }
        Ok(worst)
    })]
}

/// Every check of `suite` for a chain of `n` sites, in report order.
fn catalogue(suite: Suite, n: usize) -> Vec<Check> {
    match suite {
        Suite::Algebra => algebra_checks(n),
        Suite::Gauge => gauge_checks(n),
        Suite::Bethe => bethe_checks(n),
        Suite::Proposition1 => proposition1_checks(n),
        Suite::Sov => sov_checks(n),
        Suite::Spectrum => spectrum_checks(n),
        Suite::Tq => tq_checks(),
    }
}

/// Names of the checks in `suite`, in report order.
pub fn check_names(suite: Suite, n: usize) -> Vec<String> {
    catalogue(suite, n).into_iter().map(|c| c.name).collect()
}

fn name_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Runs the selected suites. Each check has its own generator derived from
/// the seed and its name, so its result does not depend on scheduling.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let inst = config.instance.build()?;
    Ok(run_on(config, inst))
}

/// [`run`] with an already-built instance.
pub fn run_on(config: &RunConfig, inst: ModelInstance) -> RunReport {
    let n = inst.n();
    let seed = config.draw_seed();
    let mut suites = config.suites.clone();
    suites.sort();
    suites.dedup();
    let checks: Vec<Check> = suites.iter().flat_map(|&s| catalogue(s, n)).collect();
    let ctx = Arc::new(Context {
        inst,
        m0: config.m0,
        seed,
        analytic: OnceLock::new(),
        spectrum: OnceLock::new(),
    });
    let records = with_workers(config.workers, || {
        Exec::Parallel.map(&checks, |chk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&chk.name));
            let t0 = Instant::now();
            let out = (chk.job)(&ctx, &mut rng);
            let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
            let tolerance = config.tolerance(&chk.name, chk.suite, chk.tol);
            let (residual, error) = match out {
                Ok(r) if r.is_nan() => (f64::INFINITY, Some("residual is NaN".to_string())),
                Ok(r) => (r.abs(), None),
                Err(e) => (f64::INFINITY, Some(e.to_string())),
            };
            CheckRecord {
                suite: chk.suite,
                check: chk.name.clone(),
                anchor: chk.anchor.to_string(),
                n,
                seed,
                residual,
                tolerance,
                pass: error.is_none() && residual <= tolerance,
                elapsed_ms,
                error,
            }
        })
    });
    let mut per: BTreeMap<Suite, SuiteCount> = BTreeMap::new();
    for r in &records {
        let e = per.entry(r.suite).or_default();
        e.total += 1;
        e.passed += r.pass as usize;
    }
    let passed = records.iter().filter(|r| r.pass).count();
    RunReport {
        summary: Summary {
            total: records.len(),
            passed,
            failed: records.len() - passed,
            suites: per,
        },
        records,
    }
}

/// One row of the spectrum table.
#[derive(Debug, Clone, Serialize)]
pub struct BranchRow {
    pub index: usize,
    pub lambda_at_v: Vec<C64>,
    pub roots: Vec<C64>,
    pub bethe_residual: f64,
    pub tq_residual: Option<f64>,
}

/// Solves the spectrum and tabulates `Lambda(v_j)`, the roots and the T-Q
/// residual of each branch.
pub fn spectrum_table(inst: &ModelInstance, seed: u64, exec: Exec) -> Result<Vec<BranchRow>> {
    let strategy = SolveStrategy {
        seed,
        exec,
        ..SolveStrategy::default()
    };
    let branches = solve_bethe(inst, &strategy)?;
    Ok(branches
        .iter()
        .enumerate()
        .map(|(index, br)| BranchRow {
            index,
            lambda_at_v: inst.v.iter().map(|&v| br.spectral.eval(v, inst.q)).collect(),
            roots: br.roots().to_vec(),
            bethe_residual: br.bethe_residual,
            tq_residual: tq_residual(&br.spectral, inst, seed ^ index as u64).ok(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn config_diagnostics() {
        let e = RunConfig::from_json("{\n  \"instance\": {\"n\": 2},\n  \"suites\": [\"algbra\"]\n}").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let e = RunConfig::from_json(r#"{"instance": {"n": 9}}"#).unwrap_err();
        assert!(e.to_string().contains("instance.n"));
        let e = RunConfig::from_json(r#"{"instance": {"n": 2}, "suites": []}"#).unwrap_err();
        assert!(e.to_string().contains("empty suite list"));
        let e = RunConfig::from_json(r#"{"instance": {"n": 2}, "bogus": 1}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn explicit_instance_from_json() {
        let inst = sample_generic(3, 2).unwrap();
        let (l, r) = (inst.left, inst.right);
        let spec = InstanceSpec {
            q: Some(inst.q),
            v: Some(inst.v.clone()),
            left: Some(LeftSpec {
                kappa: l.kappa,
                kappa_t: l.kappa_t,
                xi: l.xi,
                xi_t: l.xi_t,
            }),
            right: Some(RightSpec {
                tau: r.tau,
                tau_t: r.tau_t,
                mu: r.mu,
                mu_t: r.mu_t,
            }),
            ..InstanceSpec::default()
        };
        let text = serde_json::to_string(&serde_json::json!({ "instance": spec, "suites": ["tq"] })).unwrap();
        assert!(text.contains("[") && text.contains("\"q\""));
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.instance.build().unwrap(), inst);
    }

    #[test]
    fn tolerance_precedence() {
        let mut cfg = RunConfig::seeded(1, 1, vec![Suite::Algebra]);
        assert_eq!(cfg.tolerance("fr1", Suite::Algebra, 1e-10), 1e-10);
        cfg.tol = Some(1e-3);
        assert_eq!(cfg.tolerance("fr1", Suite::Algebra, 1e-10), 1e-3);
        cfg.tolerances.insert("algebra".into(), 1e-4);
        assert_eq!(cfg.tolerance("fr1", Suite::Algebra, 1e-10), 1e-4);
        cfg.tolerances.insert("fr1".into(), 1e-5);
        assert_eq!(cfg.tolerance("fr1", Suite::Algebra, 1e-10), 1e-5);
    }

    #[test]
    fn spectra_matching() {
        let a = [C64::new(1.0, 0.0), C64::new(2.0, 0.0)];
        let b = [C64::new(2.0, 0.0), C64::new(1.0, 1e-9)];
        assert!(match_spectra(&a, &b) < 1e-9);
        assert_eq!(match_spectra(&a, &b[..1]), 1.0);
        let c = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        assert!(match_spectra(&a, &c) > 0.4);
    }

    #[test]
    fn single_site_run_passes_and_is_deterministic() {
        let cfg = RunConfig::seeded(7, 1, Suite::ALL.to_vec());
        let a = run(&cfg).unwrap();
        for r in &a.records {
            assert!(r.pass, "{r:?}");
        }
        let mut cfg1 = cfg.clone();
        cfg1.workers = Some(1);
        let b = run(&cfg1).unwrap();
        let strip = |r: &RunReport| {
            r.records
                .iter()
                .map(|x| CheckRecord { elapsed_ms: 0.0, ..x.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.summary.total, a.records.len());
        assert!(a.summary.all_passed());
    }

    #[test]
    fn bad_tolerance_rejected() {
        let mut cfg = RunConfig::seeded(2, 1, vec![Suite::Tq]);
        cfg.tolerances.insert("tq_relation".into(), -1.0);
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn jsonl_layout() {
        let cfg = RunConfig::seeded(5, 1, vec![Suite::Proposition1]);
        let rep = run(&cfg).unwrap();
        let mut buf = Vec::new();
        rep.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), rep.records.len() + 1);
        let rec: CheckRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(rec.check, "proposition1");
        assert!(lines.last().unwrap().starts_with("{\"summary\""));
    }
}
