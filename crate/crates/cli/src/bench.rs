//! `lropf bench`: one CSV row per case, errors included as rows.
//!
//! Manifest layout:
//!
//! ```toml
//! [defaults]
//! max-iter = 10000
//!
//! [[case]]
//! file = "case9.m"
//! mu = 0.01
//! ```
//!
//! Without a manifest every `*.m` file of the directory is run in name order.
//! Per-case settings win over command-line flags, which win over defaults.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lowrank_opf::solve;
use serde::Deserialize;

use crate::{load_case, SolveOpts};

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Overrides {
    mu: Option<f64>,
    nu: Option<f64>,
    rank_max: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    mu_schedule: Option<String>,
}

impl Overrides {
    fn opts(&self) -> SolveOpts {
        SolveOpts {
            mu: self.mu,
            nu: self.nu,
            rank_max: self.rank_max,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            threads: self.threads,
            mu_schedule: self.mu_schedule.clone(),
            restart: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CaseEntry {
    file: PathBuf,
    name: Option<String>,
    #[serde(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Default, Deserialize)]
struct Manifest {
    #[serde(default)]
    defaults: Overrides,
    #[serde(default, rename = "case")]
    cases: Vec<CaseEntry>,
}

struct Job {
    name: String,
    path: PathBuf,
    opts: SolveOpts,
}

fn jobs(dir: &Path, manifest: Option<&Path>, cli: &SolveOpts) -> Result<Vec<Job>> {
    let Some(path) = manifest else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "m"))
            .collect();
        files.sort();
        return Ok(files
            .into_iter()
            .map(|p| Job { name: stem(&p), path: p, opts: cli.clone() })
            .collect());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = cli.or(&m.defaults.opts());
    Ok(m.cases
        .into_iter()
        .map(|c| {
            let path = dir.join(&c.file);
            Job { name: c.name.unwrap_or_else(|| stem(&path)), opts: c.overrides.opts().or(&base), path }
        })
        .collect())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run<W: Write>(dir: &Path, manifest: Option<&Path>, cli: &SolveOpts, out: W) -> Result<()> {
    let jobs = jobs(dir, manifest, cli)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "objective", "infeasibility", "iterations", "time_s", "status"])?;
    for job in jobs {
        let row = load_case(&job.path).and_then(|net| {
            let cfg = job.opts.config(&net)?;
            Ok(solve(&net, &cfg)?)
        });
        match row {
            Ok(rep) => w.write_record([
                job.name,
                rep.objective.to_string(),
                rep.t_final.to_string(),
                rep.iterations.to_string(),
                format!("{:.3}", rep.wall_time),
                rep.status.to_string(),
            ])?,
            Err(e) => {
                w.write_record([job.name, String::new(), String::new(), String::new(), String::new(), format!("error: {e:#}")])?
            }
        }
        w.flush()?;
    }
    Ok(())
}
