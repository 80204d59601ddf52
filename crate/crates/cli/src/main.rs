//! `lropf`: solve, trace, certify and benchmark case files from the shell.

mod bench;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lowrank_opf::certify::{self, Tolerances};
use lowrank_opf::qf::Family;
use lowrank_opf::{
    parse_case, solve, validate, AugLagState64, InstanceMatrices64, MuSchedule, Network64, Parallelism,
    Severity, SolveConfig64, Status,
};

#[derive(Parser, Debug)]
#[command(name = "lropf", version, about = "Low-rank coordinate descent for AC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one case and print a JSON report.
    Solve {
        case: PathBuf,
        #[command(flatten)]
        opts: SolveOpts,
        /// Write the per-iteration CSV of the first stage here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final iterate here, for a later --restart.
        #[arg(long)]
        save_state: Option<PathBuf>,
    },
    /// Solve one case and print the per-iteration CSV.
    Trace {
        case: PathBuf,
        #[command(flatten)]
        opts: SolveOpts,
    },
    /// Check a saved iterate: rank, dual certificate and power-flow residuals.
    Certify {
        case: PathBuf,
        /// State file written by `solve --save-state`.
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        rank_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        stat_tol: f64,
        #[arg(long, default_value_t = 1e-8)]
        eig_tol: f64,
    },
    /// Solve every case of a directory and print one CSV row per case.
    Bench {
        dir: PathBuf,
        /// TOML manifest listing the cases and per-case overrides.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        opts: SolveOpts,
    },
    /// Print one coefficient matrix as zero-based `i j value` lines.
    DumpMatrix {
        case: PathBuf,
        /// One of t, g, h, u, v.
        #[arg(long)]
        family: String,
        #[arg(long)]
        index: usize,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct SolveOpts {
    /// Step size; the penalty weight is its reciprocal.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Largest rank of the schedule 1, 2, ..., rank-max.
    #[arg(long)]
    rank_max: Option<usize>,
    /// Target infeasibility.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker count; 1 keeps the deterministic sweep order.
    #[arg(long)]
    threads: Option<usize>,
    /// fixed | geometric:<factor> | adaptive:<theta>:<beta>
    #[arg(long)]
    mu_schedule: Option<String>,
    /// Start from a state file instead of a random point.
    #[arg(long)]
    restart: Option<PathBuf>,
}

impl SolveOpts {
    /// Fields set here win over `base`.
    fn or(&self, base: &SolveOpts) -> SolveOpts {
        SolveOpts {
            mu: self.mu.or(base.mu),
            nu: self.nu.or(base.nu),
            rank_max: self.rank_max.or(base.rank_max),
            tol: self.tol.or(base.tol),
            max_iter: self.max_iter.or(base.max_iter),
            seed: self.seed.or(base.seed),
            threads: self.threads.or(base.threads),
            mu_schedule: self.mu_schedule.clone().or_else(|| base.mu_schedule.clone()),
            restart: self.restart.clone().or_else(|| base.restart.clone()),
        }
    }

    fn config(&self, net: &Network64) -> Result<SolveConfig64> {
        let mut cfg = SolveConfig64::default();
        if let Some(mu) = self.mu {
            cfg.mu0 = mu;
        }
        if let Some(nu) = self.nu {
            cfg.nu = nu;
        }
        if let Some(r) = self.rank_max {
            if r == 0 {
                bail!("--rank-max must be at least 1");
            }
            cfg.rank_schedule = (1..=r).collect();
        }
        if let Some(tol) = self.tol {
            cfg.tol_t = tol;
        }
        if let Some(n) = self.max_iter {
            cfg.max_inner = n;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        match self.threads {
            None | Some(1) => {}
            Some(0) => bail!("--threads must be at least 1"),
            Some(workers) => cfg.parallel = Parallelism::Parallel { workers },
        }
        if let Some(text) = &self.mu_schedule {
            cfg.mu_schedule = parse_schedule(text)?;
        }
        if let Some(path) = &self.restart {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let inst = InstanceMatrices64::build(net)?;
            cfg.restart = Some(AugLagState64::from_snapshot(&text, &inst)?);
        }
        cfg.check()?;
        Ok(cfg)
    }
}

fn parse_schedule(text: &str) -> Result<MuSchedule<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<f64>().with_context(|| format!("bad number {s:?} in --mu-schedule"));
    Ok(match parts.as_slice() {
        ["fixed"] => MuSchedule::Fixed,
        ["geometric", f] => MuSchedule::Geometric { factor: num(f)? },
        ["adaptive"] => MuSchedule::adaptive(),
        ["adaptive", theta, beta] => MuSchedule::Adaptive { shrink: num(theta)?, backoff: num(beta)? },
        _ => bail!("unknown --mu-schedule {text:?}; expected fixed, geometric:<f> or adaptive:<theta>:<beta>"),
    })
}

fn load_case(path: &Path) -> Result<Network64> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let net: Network64 = parse_case(&text).with_context(|| format!("parsing {}", path.display()))?;
    let errors: Vec<String> =
        validate(&net).into_iter().filter(|d| d.severity == Severity::Error).map(|d| d.to_string()).collect();
    if !errors.is_empty() {
        bail!("{}: {}", path.display(), errors.join("; "));
    }
    Ok(net)
}

fn exit_code(status: Status) -> u8 {
    match status {
        Status::Converged | Status::RejectedRank => 0,
        Status::IterationLimit => 2,
    }
}

fn cmd_solve(case: &Path, opts: &SolveOpts, trace: Option<&Path>, save_state: Option<&Path>) -> Result<u8> {
    let net = load_case(case)?;
    let mut cfg = opts.config(&net)?;
    cfg.record_trace = trace.is_some();
    let rep = solve(&net, &cfg)?;
    if let Some(path) = trace {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report::write_trace(file, &rep.trace)?;
    }
    if let Some(path) = save_state {
        fs::write(path, rep.state.to_snapshot()).with_context(|| format!("writing {}", path.display()))?;
    }
    let json = report::SolveJson::new(&rep, &net);
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&json)?)?;
    Ok(exit_code(rep.status))
}

fn cmd_trace(case: &Path, opts: &SolveOpts) -> Result<u8> {
    let net = load_case(case)?;
    let mut cfg = opts.config(&net)?;
    cfg.record_trace = true;
    let rep = solve(&net, &cfg)?;
    report::write_trace(std::io::stdout().lock(), &rep.trace)?;
    Ok(exit_code(rep.status))
}

fn cmd_certify(case: &Path, state: &Path, tol: Tolerances) -> Result<u8> {
    let net = load_case(case)?;
    let inst = InstanceMatrices64::build(&net)?;
    let text = fs::read_to_string(state).with_context(|| format!("reading {}", state.display()))?;
    let state = AugLagState64::from_snapshot(&text, &inst)?;
    let cert = certify::dual_certificate(&state, &inst, &tol)?;
    let residuals = match certify::extract_voltages(&state.r, &net, tol.rank) {
        Ok(v) => Some(certify::acopf_residuals(&v, &net)?),
        Err(_) => None,
    };
    let json = serde_json::json!({
        "certificate": cert,
        "max_violation": residuals.as_ref().map(|r| r.max_violation),
        "residuals": residuals,
    });
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&json)?)?;
    Ok(0)
}

fn cmd_dump(case: &Path, family: &str, index: usize) -> Result<u8> {
    let net = load_case(case)?;
    let inst = InstanceMatrices64::build(&net)?;
    let fam = match family.to_ascii_lowercase().as_str() {
        "t" => Family::T,
        "g" => Family::G,
        "h" => Family::H,
        "u" => Family::U,
        "v" => Family::V,
        _ => bail!("unknown family {family:?}; expected t, g, h, u or v"),
    };
    let len = inst.layout.range(fam).len();
    if index >= len {
        bail!("index {index} out of range: family {family} has {len} matrices");
    }
    let mut out = std::io::stdout().lock();
    write!(out, "{}", inst.matrix(fam, index).dump())?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve { case, opts, trace, save_state } => cmd_solve(&case, &opts, trace.as_deref(), save_state.as_deref()),
        Command::Trace { case, opts } => cmd_trace(&case, &opts),
        Command::Certify { case, state, rank_tol, stat_tol, eig_tol } => {
            let tol = Tolerances { rank: rank_tol, stationarity: stat_tol, eigen: eig_tol, ..Tolerances::default() };
            cmd_certify(&case, &state, tol)
        }
        Command::Bench { dir, manifest, opts } => {
            bench::run(&dir, manifest.as_deref(), &opts, std::io::stdout().lock())?;
            Ok(0)
        }
        Command::DumpMatrix { case, family, index } => cmd_dump(&case, &family, index),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        // a closed pipe (`lropf ... | head`) is not an error
        Err(e) if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
