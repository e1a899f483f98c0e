//! Acceptance sweep: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxz_maba::bethe::{
    bethe_residuals, bethe_vector, check_full_offshell, check_offshell_transfer, check_proposition1,
    highest_weight_actions, nilpotency_residual, off_diagonal_actions, solve_bethe, tq_residual, SolveStrategy,
};
use xxz_maba::eigen::eigenvalues;
use xxz_maba::error::{Error, Result};
use xxz_maba::exec::Exec;
use xxz_maba::functions::{check_identity, random_point, FramePair, Identity};
use xxz_maba::gauge::{
    check_commutation, gauge_vector_residual, gauged_transfer, modified_diagonal_residual,
};
use xxz_maba::lattice::{
    analytic_constraints, dual_reflection_residual, reflection_residual, sklyanin_relation, transfer_raw,
    yang_baxter_residual,
};
use xxz_maba::linalg::{rel_diff_mat, C64};
use xxz_maba::params::{sample_constrained, sample_generic, ModelInstance};
use xxz_maba::report::match_spectra;
use xxz_maba::sov::{
    biorthogonality, bit_strings, collinearity, projection_check, pseudo_eigen_residuals, sov_eigenstate,
    sov_spectrum, SovBasis, SovSeeding,
};

type Rng = ChaCha8Rng;

/// One measured quantity of a criterion.
struct Part {
    label: &'static str,
    worst: f64,
    tol: f64,
}

impl Part {
    fn new(label: &'static str, tol: f64) -> Self {
        Self { label, worst: 0.0, tol }
    }

    fn add(&mut self, r: Result<f64>) {
        self.worst = match r {
            Ok(x) if !x.is_nan() => self.worst.max(x),
            Ok(_) => f64::INFINITY,
            Err(e) => {
                eprintln!("    {}: {e}", self.label);
                f64::INFINITY
            }
        };
    }

    fn ok(&self) -> bool {
        self.worst <= self.tol
    }
}

fn retry(rng: &mut Rng, mut f: impl FnMut(&mut Rng) -> Result<f64>) -> Result<f64> {
    let mut last = Error::Sampling(0);
    for _ in 0..20 {
        match f(rng) {
            Err(e @ (Error::Singularity { .. } | Error::GaugeDegeneracy { .. } | Error::CoincidentRoots(_))) => {
                last = e
            }
            r => return r,
        }
    }
    Err(last)
}

fn pts(rng: &mut Rng, k: usize) -> Vec<C64> {
    (0..k).map(|_| random_point(rng)).collect()
}

fn inst(seed: u64, n: usize) -> ModelInstance {
    sample_generic(seed, n).expect("generic draw")
}

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Max over an order-preserving parallel map.
fn par_max<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<f64> + Sync + Send) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for r in Exec::Parallel.map(items, f) {
        worst = worst.max(r?);
    }
    Ok(worst)
}

fn foundation() -> Vec<Part> {
    let mut p = [Part::new("yang-baxter", 1e-12), Part::new("reflection", 1e-12), Part::new("dual", 1e-12)];
    for seed in 1..=20u64 {
        let m = inst(seed, 2);
        let mut r = rng(seed);
        p[0].add(retry(&mut r, |r| {
            let x = pts(r, 3);
            yang_baxter_residual(x[0], x[1], x[2], m.q)
        }));
        p[1].add(retry(&mut r, |r| {
            let x = pts(r, 2);
            reflection_residual(x[0], x[1], &m)
        }));
        p[2].add(retry(&mut r, |r| {
            let x = pts(r, 2);
            dual_reflection_residual(x[0], x[1], &m)
        }));
    }
    p.into()
}

fn transfer_structure() -> Vec<Part> {
    let mut p = [
        Part::new("parity/crossing", 1e-11),
        Part::new("t(1), t(i)", 1e-10),
        Part::new("leading", 1e-6),
        Part::new("holdout", 1e-8),
    ];
    for n in 1..=4 {
        let m = inst(100 + n as u64, n);
        let mut r = rng(n as u64);
        for _ in 0..5 {
            let u = random_point(&mut r);
            let t = transfer_raw(u, &m);
            p[0].add(Ok(rel_diff_mat(&transfer_raw(-u, &m), &t).max(rel_diff_mat(&transfer_raw(m.cross(u), &m), &t))));
        }
        let held = pts(&mut r, 5);
        match analytic_constraints(&m, &held) {
            Ok(a) => {
                p[1].add(Ok(a.t_one.max(a.t_i)));
                p[2].add(Ok(a.leading_extrapolated.max(a.leading_interpolated)));
                p[3].add(Ok(a.polynomial_holdout));
            }
            Err(e) => p.iter_mut().for_each(|x| x.add(Err(e.clone()))),
        }
    }
    p.into()
}

fn quantum_determinant() -> Vec<Part> {
    let mut p = Part::new("all sites", 1e-9);
    for n in 1..=4 {
        let m = inst(200 + n as u64, n);
        for i in 1..=n {
            p.add(sklyanin_relation(&m, i));
        }
    }
    vec![p]
}

fn gauge_layer() -> Vec<Part> {
    let mut p = [
        Part::new("scalar products/closure", 1e-12),
        Part::new("frame independence", 1e-11),
        Part::new("exchange relations", 1e-11),
    ];
    for n in 1..=3 {
        let m = inst(300 + n as u64, n);
        let mut r = rng(n as u64);
        let frames = [
            m.gauge_dr(0).unwrap(),
            m.gauge_dl(0, n).unwrap(),
            m.gauge_generic(C64::new(0.4, 0.9), C64::new(1.2, -0.3), 0).unwrap(),
        ];
        for f in &frames {
            for u in pts(&mut r, 5) {
                for lvl in -2..=2 {
                    p[0].add(Ok(gauge_vector_residual(f, u, lvl)));
                }
                for lvl in [0, 1, 3] {
                    p[1].add(gauged_transfer(u, lvl, f, &m).map(|g| g.residual));
                }
            }
        }
        let pairs: Vec<u64> = (0..20).collect();
        p[2].add(par_max(&pairs, |&k| {
            let mut r = rng(1000 * n as u64 + k);
            retry(&mut r, |r| {
                let x = pts(r, 2);
                let lvl = [-2, 0, 1][k as usize % 3];
                Ok(check_commutation(x[0], x[1], lvl, &frames[1], &m)?.into_iter().fold(0.0, f64::max))
            })
        }));
    }
    p.into()
}

fn representation_layer() -> Vec<Part> {
    let mut p = [
        Part::new("highest weight", 1e-10),
        Part::new("nilpotency", 1e-9),
        Part::new("off-diagonal", 1e-10),
        Part::new("modified diagonal", 1e-10),
    ];
    for n in 1..=3 {
        let m = inst(400 + n as u64, n);
        let mut r = rng(n as u64);
        for _ in 0..5 {
            p[0].add(retry(&mut r, |r| Ok(highest_weight_actions(random_point(r), &m, 0)?.into_iter().fold(0.0, f64::max))));
            p[1].add(retry(&mut r, |r| nilpotency_residual(&pts(r, n + 1), &m, 0)));
            p[2].add(retry(&mut r, |r| {
                let (a, d) = off_diagonal_actions(random_point(r), &m, 0, n)?;
                Ok(a.max(d))
            }));
            p[3].add(retry(&mut r, |r| {
                let u = random_point(r);
                let mut w: f64 = 0.0;
                for len in 0..=n {
                    w = w.max(modified_diagonal_residual(u, 0, len, &m)?);
                }
                Ok(w)
            }));
        }
    }
    p.into()
}

/// `N in {1,2,3}`, 5 instances each, 25 random `(u, ubar)` per instance.
fn offshell_sweep(
    label: &'static str,
    tol: f64,
    sample: fn(u64, usize) -> Result<ModelInstance>,
    check: fn(C64, &[C64], &ModelInstance, i32) -> Result<f64>,
) -> Vec<Part> {
    let mut p = Part::new(label, tol);
    let jobs: Vec<(usize, u64)> = (1..=3).flat_map(|n| (0..5).map(move |s| (n, 500 + 10 * n as u64 + s))).collect();
    p.add(par_max(&jobs, |&(n, seed)| {
        let m = sample(seed, n)?;
        let mut r = rng(seed);
        let mut w: f64 = 0.0;
        for _ in 0..25 {
            w = w.max(retry(&mut r, |r| {
                let us = pts(r, n);
                check(random_point(r), &us, &m, 0)
            })?);
        }
        Ok(w)
    }));
    vec![p]
}

fn scalar_identities() -> Vec<Part> {
    let mut p = [Part::new("FR1/FR2/FR3", 1e-10), Part::new("interpolation identity", 1e-10)];
    for n in 1..=3 {
        let m = inst(600 + n as u64, n);
        let mut r = rng(n as u64);
        let frames = [
            m.gauge_dl(0, n).unwrap(),
            m.gauge_generic(C64::new(0.7, 0.4), C64::new(-0.3, 1.1), 0).unwrap(),
        ];
        for f in &frames {
            for len in 1..=4 {
                for id in [Identity::Fr1, Identity::Fr2, Identity::Fr3] {
                    p[0].add(retry(&mut r, |r| {
                        let us = pts(r, len);
                        check_identity(id, &m, f, 1, &us, random_point(r), &[])
                    }));
                }
            }
        }
        for h in bit_strings(n) {
            p[1].add(retry(&mut r, |r| {
                let us = pts(r, n);
                check_identity(Identity::OffshellBv4, &m, &frames[0], 0, &us, random_point(r), &h)
            }));
        }
    }
    p.into()
}

fn sov_layer() -> Vec<Part> {
    let mut p = [
        Part::new("pseudo-eigen", 1e-10),
        Part::new("projections", 1e-10),
        Part::new("biorthogonality", 1e-10),
        Part::new("measure", 1e-8),
    ];
    for n in 1..=3 {
        let m = inst(700 + n as u64, n);
        let basis = SovBasis::new(&m, 0).unwrap();
        let mut r = rng(n as u64);
        let u = random_point(&mut r);
        let us = pts(&mut r, n);
        for h in bit_strings(n) {
            for lvl in [0, 2] {
                p[0].add(pseudo_eigen_residuals(u, &h, lvl, &basis).map(|(a, b)| a.max(b)));
            }
            p[1].add(projection_check(u, &us, &h, &m, 0).map(|(a, b)| a.max(b)));
        }
        for lvl in [0, 2 * n as i32 - 2] {
            let b = biorthogonality(lvl, &basis);
            p[2].add(b.clone().map(|x| x.0));
            p[3].add(b.map(|x| x.1));
        }
    }
    p.into()
}

fn spectrum_completeness() -> Vec<Part> {
    let mut p = [
        Part::new("branch count", 0.5),
        Part::new("three-way agreement", 1e-7),
        Part::new("Bethe equations", 1e-8),
        Part::new("T-Q", 1e-8),
        Part::new("SoV state", 1e-7),
    ];
    for n in 1..=3 {
        let m = inst(800 + n as u64, n);
        let full = (1usize << n) as f64;
        let bethe = match solve_bethe(&m, &SolveStrategy { seed: n as u64, ..SolveStrategy::default() }) {
            Ok(b) => b,
            Err(e) => {
                p.iter_mut().for_each(|x| x.add(Err(e.clone())));
                continue;
            }
        };
        let sov = sov_spectrum(&m, SovSeeding::Homotopy { seed: n as u64 }, Exec::Parallel);
        let mut r = rng(900 + n as u64);
        let u = random_point(&mut r);
        let oracle = eigenvalues(&transfer_raw(u, &m)).unwrap();
        let bv: Vec<C64> = bethe.iter().map(|b| b.lambda_from_roots(u, &m)).collect();
        p[0].add(Ok((bethe.len() as f64 - full).abs()));
        p[1].add(Ok(match_spectra(&oracle, &bv)));
        match sov {
            Ok(s) => {
                p[0].add(Ok((s.branches.len() as f64 - full).abs()));
                let sv: Vec<C64> = s.branches.iter().map(|b| b.spectral.eval(u, m.q)).collect();
                p[1].add(Ok(match_spectra(&oracle, &sv)));
            }
            Err(e) => p[1].add(Err(e)),
        }
        for (k, br) in bethe.iter().enumerate() {
            p[2].add(bethe_residuals(br.roots(), &m).map(|v| v.iter().map(|z| z.norm()).fold(0.0, f64::max)));
            p[3].add(tq_residual(&br.spectral, &m, k as u64));
            p[4].add((|| {
                let phi = sov_eigenstate(&br.spectral, 0, &m)?.amplitudes;
                let psi = bethe_vector(br.roots(), &m, 0)?.amplitudes;
                Ok(collinearity(&phi, &psi).1)
            })());
        }
    }
    p.into()
}

fn constrained_boundary() -> Vec<Part> {
    // the tuned draw zeroes eta together with eta-hat, so both are checked
    // in absolute terms on O(1) parameters
    let mut p = vec![Part::new("|eta-hat|", 1e-12), Part::new("|chi|", 1e-12)];
    for n in 1..=3 {
        for s in 0..5 {
            let m = sample_constrained(500 + 10 * n as u64 + s, n).unwrap();
            p[0].add(FramePair::new(&m, 0, n).map(|f| f.eta_hat().norm()));
            p[1].add(Ok(m.chi().norm()));
        }
    }
    p.extend(offshell_sweep("proposition 1", 1e-9, sample_constrained, check_proposition1));
    p.extend(offshell_sweep("full off-shell", 1e-9, sample_constrained, check_full_offshell));
    p.extend(offshell_sweep("modified action", 1e-9, sample_constrained, check_offshell_transfer));
    p
}

fn main() -> ExitCode {
    type Criterion = (&'static str, Option<Duration>, Box<dyn Fn() -> Vec<Part>>);
    let criteria: Vec<Criterion> = vec![
        ("foundation identities", Some(Duration::from_secs(1)), Box::new(foundation)),
        ("transfer-matrix structure", Some(Duration::from_secs(10)), Box::new(transfer_structure)),
        ("quantum determinant", None, Box::new(quantum_determinant)),
        ("gauge layer", None, Box::new(gauge_layer)),
        ("representation layer", None, Box::new(representation_layer)),
        (
            "proposition 1 sweep",
            Some(Duration::from_secs(60)),
            Box::new(|| offshell_sweep("proposition 1", 1e-9, sample_generic, check_proposition1)),
        ),
        (
            "full off-shell action",
            None,
            Box::new(|| offshell_sweep("full off-shell", 1e-9, sample_generic, check_full_offshell)),
        ),
        ("scalar identities", None, Box::new(scalar_identities)),
        ("SoV layer", None, Box::new(sov_layer)),
        ("spectrum completeness", Some(Duration::from_secs(300)), Box::new(spectrum_completeness)),
        ("constrained boundary", None, Box::new(constrained_boundary)),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let parts = run();
        let dt = t0.elapsed();
        let in_time = budget.is_none_or(|b| dt <= b);
        let ok = in_time && parts.iter().all(Part::ok);
        failed += !ok as usize;
        let detail: Vec<String> = parts.iter().map(|p| format!("{} {:.1e}/{:.0e}", p.label, p.worst, p.tol)).collect();
        let budget = budget.map(|b| format!(" (budget {}s)", b.as_secs())).unwrap_or_default();
        println!(
            "{} {:>2} {:<26} {:.2}s{}  {}",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            name,
            dt.as_secs_f64(),
            budget,
            detail.join(", ")
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
