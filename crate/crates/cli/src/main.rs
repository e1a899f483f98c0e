use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xxz_maba::exec::Exec;
use xxz_maba::report::{run, spectrum_table, RunConfig, RunReport, Suite};

/// Numerical verification of the modified algebraic Bethe ansatz for the
/// open XXZ chain with non-diagonal boundaries.
#[derive(Parser)]
#[command(name = "xxz-maba", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the suites named by --suite (or by the config file).
    Verify(Common),
    /// Solve the spectrum and print Lambda(v_j), roots and T-Q residuals.
    Spectrum(Common),
    /// Off-shell action suites.
    Bethe(Common),
    /// T-Q relation on every branch.
    Tq(Common),
    /// Every suite.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long = "suite", value_parser = parse_suite)]
    suites: Vec<Suite>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Global tolerance override.
    #[arg(long)]
    tol: Option<f64>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file (JSON lines); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "XXZ_MABA_WORKERS")]
    workers: Option<usize>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: xxz_maba::error::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Common {
    fn config(&self, preset: Option<Vec<Suite>>) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::seeded(0, 2, Vec::new()),
        };
        if self.n.is_some() {
            cfg.instance.n = self.n;
        }
        if self.seed.is_some() {
            cfg.instance.seed = self.seed;
        }
        if let Some(p) = preset {
            cfg.suites = p;
        } else if !self.suites.is_empty() {
            cfg.suites = self.suites.clone();
        } else if self.config.is_none() {
            cfg.suites.clear();
        }
        if self.tol.is_some() {
            cfg.tol = self.tol;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn report(cfg: &RunConfig) -> Result<bool, Failure> {
    let rep: RunReport = run(cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut w = sink(&cfg.out)?;
    rep.write_jsonl(&mut w).map_err(|e| Failure::Runtime(e.to_string()))?;
    w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
    for r in rep.records.iter().filter(|r| !r.pass) {
        eprintln!(
            "FAIL {}/{}: residual {:e} > {:e}{}",
            r.suite,
            r.check,
            r.residual,
            r.tolerance,
            r.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
        );
    }
    eprintln!("{}/{} checks passed", rep.summary.passed, rep.summary.total);
    Ok(rep.summary.all_passed())
}

fn fmt_c(z: &xxz_maba::linalg::C64) -> String {
    format!("{:+.9e}{:+.9e}i", z.re, z.im)
}

fn spectrum(cfg: &RunConfig) -> Result<bool, Failure> {
    let inst = cfg.instance.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    let tol = cfg.tol.unwrap_or(1e-8);
    let rows = xxz_maba::exec::with_workers(cfg.workers, || spectrum_table(&inst, cfg.draw_seed(), Exec::Parallel))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut ok = rows.len() == inst.dim();
    let mut w = sink(&cfg.out)?;
    let io = |e: io::Error| Failure::Runtime(e.to_string());
    if cfg.out.is_some() {
        for r in &rows {
            serde_json::to_writer(&mut w, r).map_err(|e| Failure::Runtime(e.to_string()))?;
            writeln!(w).map_err(io)?;
        }
    }
    let mut table = String::new();
    for r in &rows {
        let tq = r.tq_residual.unwrap_or(f64::INFINITY);
        ok &= tq <= tol && r.bethe_residual <= tol;
        table.push_str(&format!("branch {}  bethe {:.2e}  tq {:.2e}\n", r.index, r.bethe_residual, tq));
        for (j, l) in r.lambda_at_v.iter().enumerate() {
            table.push_str(&format!("  Lambda(v_{}) = {}\n", j + 1, fmt_c(l)));
        }
        for (j, u) in r.roots.iter().enumerate() {
            table.push_str(&format!("  u_{} = {}\n", j + 1, fmt_c(u)));
        }
    }
    table.push_str(&format!("{} of {} branches\n", rows.len(), inst.dim()));
    if cfg.out.is_some() {
        eprint!("{table}");
    } else {
        write!(w, "{table}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Verify(c) => c.config(None).and_then(|cfg| report(&cfg)),
        Verb::All(c) => c.config(Some(Suite::ALL.to_vec())).and_then(|cfg| report(&cfg)),
        Verb::Bethe(c) => c.config(Some(vec![Suite::Bethe, Suite::Proposition1])).and_then(|cfg| report(&cfg)),
        Verb::Tq(c) => c.config(Some(vec![Suite::Tq])).and_then(|cfg| report(&cfg)),
        Verb::Spectrum(c) => c.config(Some(vec![Suite::Spectrum])).and_then(|cfg| spectrum(&cfg)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
