//! The solver: an outer loop over the rank of the factor and an inner loop of
//! exact coordinate-descent sweeps on the augmented Lagrangian.

use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::auglag::{project_boxes, update_multipliers, AugLagState, Family, Residuals};
use crate::case_io::{validate, Network, Severity};
use crate::certify::{self, Certificate, CertifyError, Tolerances};
use crate::polyroot::{minimize_quadratic_box, minimize_quartic, PolyError};
use crate::qf::restriction::{box_quadratic, flow_quartic, r_restriction, z_quadratic};
use crate::qf::{Factor, InstanceMatrices, QfError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuSchedule<T> {
    Fixed,
    /// `mu ← factor·mu` after every iteration.
    Geometric { factor: T },
    /// Accept an iterate only if `T_new ≤ shrink·T_prev`; otherwise discard it
    /// and divide `mu` by `backoff`.
    Adaptive { shrink: T, backoff: T },
}

impl<T: Scalar> MuSchedule<T> {
    pub fn adaptive() -> Self {
        MuSchedule::Adaptive { shrink: T::lit(0.999), backoff: T::lit(2.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parallelism {
    /// Single thread, cyclic sweeps; reproducible bit for bit.
    Deterministic,
    /// Sweeps split across a pool of `workers` threads.
    Parallel { workers: usize },
}

/// How stages after the first pick their starting factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankStart {
    /// Previous factor plus one small random column; auxiliaries and
    /// multipliers carried over.
    Warm,
    /// Fresh random factor and zero multipliers.
    Fresh,
}

#[derive(Debug, Clone)]
pub struct SolveConfig<T> {
    pub rank_schedule: Vec<usize>,
    pub mu0: T,
    pub mu_schedule: MuSchedule<T>,
    pub nu: T,
    pub tol_t: T,
    /// Once feasible, a stage keeps iterating until the objective moves by
    /// at most `stall_tol` (relative) over `stall_window` iterations, or the
    /// cap is hit. A zero window stops on infeasibility alone.
    pub stall_window: usize,
    pub stall_tol: T,
    pub max_inner: usize,
    pub seed: u64,
    pub parallel: Parallelism,
    pub rank_start: RankStart,
    /// Scale of the appended column relative to the RMS entry of the factor.
    pub warm_noise: T,
    pub record_trace: bool,
    pub tolerances: Tolerances,
    /// Starting state of the first stage instead of a random one.
    pub restart: Option<AugLagState<T>>,
}

impl<T: Scalar> Default for SolveConfig<T> {
    fn default() -> Self {
        SolveConfig {
            rank_schedule: vec![1, 2],
            mu0: T::lit(1e-4),
            mu_schedule: MuSchedule::Fixed,
            nu: T::zero(),
            tol_t: T::lit(1e-5),
            stall_window: 500,
            stall_tol: T::lit(1e-5),
            max_inner: 10_000,
            seed: 0,
            parallel: Parallelism::Deterministic,
            rank_start: RankStart::Warm,
            warm_noise: T::lit(1e-3),
            record_trace: false,
            tolerances: Tolerances::default(),
            restart: None,
        }
    }
}

impl<T: Scalar> SolveConfig<T> {
    pub fn check(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if self.rank_schedule.is_empty() || self.rank_schedule.contains(&0) {
            return bad("rank schedule must be a non-empty list of positive ranks");
        }
        if !self.rank_schedule.windows(2).all(|w| w[0] < w[1]) {
            return bad("rank schedule must be increasing");
        }
        if !(self.mu0 > T::zero()) || !self.mu0.is_finite() {
            return bad("mu0 must be positive");
        }
        if !(self.tol_t > T::zero()) {
            return bad("tol_t must be positive");
        }
        if self.stall_tol < T::zero() {
            return bad("stall tolerance must be nonnegative");
        }
        if self.nu < T::zero() {
            return bad("nu must be nonnegative");
        }
        match self.mu_schedule {
            MuSchedule::Fixed => {}
            MuSchedule::Geometric { factor } => {
                if !(factor > T::zero()) {
                    return bad("geometric factor must be positive");
                }
            }
            MuSchedule::Adaptive { shrink, backoff } => {
                if !(shrink > T::zero() && shrink < T::one()) {
                    return bad("adaptive shrink must lie in (0, 1)");
                }
                if !(backoff > T::one()) {
                    return bad("adaptive backoff must exceed 1");
                }
            }
        }
        if let Parallelism::Parallel { workers: 0 } = self.parallel {
            return bad("worker count must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid network: {0}")]
    Network(String),
    #[error(transparent)]
    Matrix(#[from] QfError),
    #[error("coordinate step failed: {0}")]
    Step(#[from] PolyError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("restart state does not match the case: {0}")]
    Restart(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    IterationLimit,
    /// The rank-one point reached the target infeasibility but the higher-rank
    /// stage did not confirm it.
    RejectedRank,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::IterationLimit => "iteration-limit",
            Status::RejectedRank => "rejected-rank",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow<T> {
    pub iter: usize,
    pub objective: T,
    #[serde(rename = "T")]
    pub infeasibility: T,
    pub mu: T,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport<T> {
    pub rank: usize,
    pub iterations: usize,
    pub objective: T,
    pub infeasibility: T,
    pub rank_numeric: usize,
    pub sigma_ratio: f64,
    pub reached_tol: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<T> {
    /// Generation cost in $/h at the reported iterate: a wider stage that
    /// ended on a point of complex rank one, else the better of the first
    /// stage and the rank-one rounding of the last wider stage.
    pub objective: T,
    pub t_final: T,
    /// Inner iterations summed over all stages.
    pub iterations: usize,
    pub rank_numeric: usize,
    pub wall_time: f64,
    pub status: Status,
    /// Rows of the first stage, starting with the initial point as row 0.
    pub trace: Vec<TraceRow<T>>,
    pub stages: Vec<StageReport<T>>,
    pub certificate: Option<Certificate>,
    /// Bus voltages, present when the rank-one iterate is confirmed.
    pub voltages: Option<Vec<Complex<T>>>,
    /// Cost at the last higher-rank stage, when one ran.
    pub relaxation_objective: Option<T>,
    /// The reported iterate, for restart files.
    #[serde(skip)]
    pub state: AugLagState<T>,
}

/// Random start: factor entries iid uniform on `[0, 1]`, auxiliaries set to
/// the values the factor implies and projected onto their boxes, zero
/// multipliers.
pub fn init_state<T: Scalar>(inst: &InstanceMatrices<T>, r: usize, seed: u64, mu0: T) -> AugLagState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inst.n();
    let data = (0..n * r).map(|_| T::lit(rng.gen::<f64>())).collect();
    let factor = Factor::from_col_major(n, r, data).expect("sized by construction");
    let mut state = AugLagState::new(inst, factor, mu0);
    match inst.traces(&state.r) {
        Ok(tr) => state.aux = tr,
        Err(_) => unreachable!("factor sized from the instance"),
    }
    fill_z(&mut state);
    project_boxes(&mut state, inst);
    state
}

fn fill_z<T: Scalar>(state: &mut AugLagState<T>) {
    let lay = state.layout;
    for k in 0..lay.n_flow {
        let u = state.aux[lay.index(Family::U, k)];
        let v = state.aux[lay.index(Family::V, k)];
        state.z[k] = u * u + v * v;
    }
}

/// Minimizes every auxiliary in turn: `t, g, h` of each bus, then `u, v, z`
/// of each flow limit. `traces` must match the current factor.
pub fn sweep_aux<T: Scalar>(state: &mut AugLagState<T>, inst: &InstanceMatrices<T>, traces: &[T]) -> Result<(), PolyError> {
    sweep_aux_observed(state, inst, traces, |_| {})
}

/// [`sweep_aux`] calling `observe` after every coordinate update.
pub fn sweep_aux_observed<T: Scalar, F: FnMut(&AugLagState<T>)>(
    state: &mut AugLagState<T>,
    inst: &InstanceMatrices<T>,
    traces: &[T],
    mut observe: F,
) -> Result<(), PolyError> {
    let lay = inst.layout;
    let rho = state.penalty();
    for k in 0..lay.n_bus {
        for fam in [Family::T, Family::G, Family::H] {
            let idx = lay.index(fam, k);
            state.aux[idx] = boxed_step(inst, state, traces, rho, fam, k)?;
            observe(state);
        }
    }
    for k in 0..lay.n_flow {
        let (iu, iv) = (lay.index(Family::U, k), lay.index(Family::V, k));
        let q = flow_quartic(rho, state.lambda[iu], traces[iu], state.lambda_z[k], state.z[k], state.aux[iv]);
        state.aux[iu] = minimize_quartic(&q, state.aux[iu])?.0;
        observe(state);
        let q = flow_quartic(rho, state.lambda[iv], traces[iv], state.lambda_z[k], state.z[k], state.aux[iu]);
        state.aux[iv] = minimize_quartic(&q, state.aux[iv])?.0;
        observe(state);
        let (a2, a1) = z_quadratic(rho, state.lambda_z[k], state.aux[iu], state.aux[iv]);
        state.z[k] = minimize_quadratic_box(a2, a1, T::zero(), inst.z_hi[k])?;
        observe(state);
    }
    Ok(())
}

#[inline]
fn boxed_step<T: Scalar>(
    inst: &InstanceMatrices<T>,
    state: &AugLagState<T>,
    traces: &[T],
    rho: T,
    fam: Family,
    k: usize,
) -> Result<T, PolyError> {
    let idx = inst.layout.index(fam, k);
    let cost = if fam == Family::T { inst.costs[k] } else { None };
    let (a2, a1) = box_quadratic(rho, state.lambda[idx], traces[idx], cost);
    minimize_quadratic_box(a2, a1, inst.lo[idx], inst.hi[idx])
}

/// Same updates as [`sweep_aux`], spread over the pool. Buses are
/// independent; the `u, v, z` of one flow limit stay on one worker so each
/// step remains an exact minimization.
fn sweep_aux_parallel<T: Scalar>(
    state: &mut AugLagState<T>,
    inst: &InstanceMatrices<T>,
    traces: &[T],
) -> Result<(), PolyError> {
    let lay = inst.layout;
    let rho = state.penalty();
    let snapshot = &*state;
    let buses: Vec<[T; 3]> = (0..lay.n_bus)
        .into_par_iter()
        .map(|k| {
            Ok([
                boxed_step(inst, snapshot, traces, rho, Family::T, k)?,
                boxed_step(inst, snapshot, traces, rho, Family::G, k)?,
                boxed_step(inst, snapshot, traces, rho, Family::H, k)?,
            ])
        })
        .collect::<Result<_, PolyError>>()?;
    let flows: Vec<[T; 3]> = (0..lay.n_flow)
        .into_par_iter()
        .map(|k| {
            let (iu, iv) = (lay.index(Family::U, k), lay.index(Family::V, k));
            let (lz, z) = (snapshot.lambda_z[k], snapshot.z[k]);
            let q = flow_quartic(rho, snapshot.lambda[iu], traces[iu], lz, z, snapshot.aux[iv]);
            let u = minimize_quartic(&q, snapshot.aux[iu])?.0;
            let q = flow_quartic(rho, snapshot.lambda[iv], traces[iv], lz, z, u);
            let v = minimize_quartic(&q, snapshot.aux[iv])?.0;
            let (a2, a1) = z_quadratic(rho, lz, u, v);
            Ok([u, v, minimize_quadratic_box(a2, a1, T::zero(), inst.z_hi[k])?])
        })
        .collect::<Result<_, PolyError>>()?;
    for (k, vals) in buses.into_iter().enumerate() {
        for (fam, x) in [Family::T, Family::G, Family::H].into_iter().zip(vals) {
            state.aux[lay.index(fam, k)] = x;
        }
    }
    for (k, [u, v, z]) in flows.into_iter().enumerate() {
        state.aux[lay.index(Family::U, k)] = u;
        state.aux[lay.index(Family::V, k)] = v;
        state.z[k] = z;
    }
    Ok(())
}

/// Cyclic column-major sweep over the factor, each entry moved to the global
/// minimizer of its quartic restriction. `traces` is kept current.
pub fn sweep_r<T: Scalar>(state: &mut AugLagState<T>, inst: &InstanceMatrices<T>, traces: &mut [T]) -> Result<(), PolyError> {
    sweep_r_observed(state, inst, traces, |_, _| {})
}

/// [`sweep_r`] calling `observe` after every coordinate update.
pub fn sweep_r_observed<T: Scalar, F: FnMut(&AugLagState<T>, &[T])>(
    state: &mut AugLagState<T>,
    inst: &InstanceMatrices<T>,
    traces: &mut [T],
    mut observe: F,
) -> Result<(), PolyError> {
    let rho = state.penalty();
    let mut betas = Vec::new();
    for c in 0..state.r.rank() {
        for i in 0..inst.n() {
            step_entry(inst, &state.aux, &state.lambda, rho, &mut state.r, traces, i, c, &mut betas)?;
            observe(state, traces);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_entry<T: Scalar>(
    inst: &InstanceMatrices<T>,
    aux: &[T],
    lambda: &[T],
    rho: T,
    r: &mut Factor<T>,
    traces: &mut [T],
    i: usize,
    c: usize,
    betas: &mut Vec<T>,
) -> Result<(), PolyError> {
    let q = r_restriction(inst, aux, lambda, rho, r, traces, i, c, betas);
    let x0 = r.get(i, c);
    let (x, _) = minimize_quartic(&q, x0)?;
    if x != x0 {
        let (dq, dl) = (x * x - x0 * x0, x - x0);
        for (span, beta) in inst.rows().spans(i).iter().zip(betas.iter()) {
            traces[span.cons] += span.diag * dq + *beta * dl;
        }
        r.set(i, c, x);
    }
    Ok(())
}

/// Greedy colouring of the rows of `R`: two rows get different colours when
/// some constraint touches both. Rows of one colour are independent
/// coordinates, so they can move at the same time.
pub fn row_colouring<T: Scalar>(inst: &InstanceMatrices<T>) -> Vec<Vec<usize>> {
    let rows = inst.rows();
    let n = inst.n();
    let mut cons_rows: Vec<Vec<usize>> = vec![Vec::new(); inst.matrices().len()];
    for i in 0..n {
        for span in rows.spans(i) {
            cons_rows[span.cons].push(i);
        }
    }
    let mut colour = vec![usize::MAX; n];
    let mut seen = Vec::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        seen.clear();
        seen.resize(classes.len() + 1, false);
        for span in rows.spans(i) {
            for &j in &cons_rows[span.cons] {
                if colour[j] < seen.len() {
                    seen[colour[j]] = true;
                }
            }
        }
        let k = seen.iter().position(|s| !s).expect("one free colour");
        if k == classes.len() {
            classes.push(Vec::new());
        }
        colour[i] = k;
        classes[k].push(i);
    }
    classes
}

/// Parallel R sweep. Each colour class is minimized at once against the
/// current point, then its trace changes are applied; the result is a serial
/// sweep in colour order and does not depend on the worker count.
fn sweep_r_parallel<T: Scalar>(
    state: &mut AugLagState<T>,
    inst: &InstanceMatrices<T>,
    traces: &mut [T],
    colours: &[Vec<usize>],
) -> Result<(), PolyError> {
    let rho = state.penalty();
    for c in 0..state.r.rank() {
        for class in colours {
            let snapshot = &*state;
            let current: &[T] = traces;
            let moves: Vec<(usize, T, T, Vec<T>)> = class
                .par_iter()
                .map_init(Vec::new, |betas, &i| {
                    let q = r_restriction(inst, &snapshot.aux, &snapshot.lambda, rho, &snapshot.r, current, i, c, betas);
                    let x0 = snapshot.r.get(i, c);
                    let (x, _) = minimize_quartic(&q, x0)?;
                    Ok((i, x0, x, if x != x0 { betas.clone() } else { Vec::new() }))
                })
                .collect::<Result<_, PolyError>>()?;
            for (i, x0, x, betas) in moves {
                if x == x0 {
                    continue;
                }
                let (dq, dl) = (x * x - x0 * x0, x - x0);
                for (span, beta) in inst.rows().spans(i).iter().zip(&betas) {
                    traces[span.cons] += span.diag * dq + *beta * dl;
                }
                state.r.set(i, c, x);
            }
        }
    }
    Ok(())
}

/// Applies the step-size schedule after an iteration. Returns whether the
/// proposed iterate is kept; a rejected iterate is replaced by `previous`
/// (when given) with the reduced step size.
pub fn step_mu<T: Scalar>(
    schedule: &MuSchedule<T>,
    state: &mut AugLagState<T>,
    previous: Option<&AugLagState<T>>,
    t_prev: T,
    t_new: T,
) -> bool {
    match *schedule {
        MuSchedule::Fixed => true,
        MuSchedule::Geometric { factor } => {
            state.mu *= factor;
            true
        }
        MuSchedule::Adaptive { shrink, backoff } => {
            if t_new <= shrink * t_prev {
                return true;
            }
            let mu = state.mu / backoff;
            if let Some(prev) = previous {
                state.clone_from(prev);
            }
            state.mu = mu;
            false
        }
    }
}

fn physical_objective<T: Scalar>(inst: &InstanceMatrices<T>, traces: &[T]) -> T {
    inst.cost_of(&traces[inst.layout.range(Family::T)])
}

struct Stage<T> {
    state: AugLagState<T>,
    residuals: Residuals<T>,
    iterations: usize,
    reached_tol: bool,
    trace: Vec<TraceRow<T>>,
}

struct Runner<'a, T> {
    inst: &'a InstanceMatrices<T>,
    cfg: &'a SolveConfig<T>,
    pool: Option<rayon::ThreadPool>,
    colours: Vec<Vec<usize>>,
}

impl<T: Scalar> Runner<'_, T> {
    fn sweep(&self, state: &mut AugLagState<T>, traces: &mut [T]) -> Result<(), PolyError> {
        match (&self.pool, self.cfg.parallel) {
            (Some(pool), Parallelism::Parallel { .. }) => pool.install(|| {
                sweep_aux_parallel(state, self.inst, traces)?;
                sweep_r_parallel(state, self.inst, traces, &self.colours)
            }),
            _ => {
                sweep_aux(state, self.inst, traces)?;
                sweep_r(state, self.inst, traces)
            }
        }
    }

    /// Inner loop. With `rank_tol`, the stage also waits for the factor to
    /// become numerically rank one before stopping early.
    fn run(&self, mut state: AugLagState<T>, rank_tol: Option<f64>, record: bool) -> Result<Stage<T>, SolveError> {
        let inst = self.inst;
        let cfg = self.cfg;
        let adaptive = matches!(cfg.mu_schedule, MuSchedule::Adaptive { .. });
        let mut res = Residuals::compute(&state, inst)?;
        let mut t_prev = res.sum_sq();
        let mut trace = Vec::new();
        if record {
            trace.push(TraceRow {
                iter: 0,
                objective: physical_objective(inst, &res.traces),
                infeasibility: t_prev,
                mu: state.mu,
                accepted: true,
            });
        }
        let feasible = |state: &AugLagState<T>, t: T| {
            t <= cfg.tol_t && rank_tol.is_none_or(|tol| certify::phase_rank(&state.r, tol).0 <= 1)
        };
        if cfg.stall_window == 0 && feasible(&state, t_prev) {
            return Ok(Stage { state, residuals: res, iterations: 0, reached_tol: true, trace });
        }
        let mut history = vec![physical_objective(inst, &res.traces)];
        let mut iterations = 0;
        let mut traces = res.traces.clone();
        for it in 1..=cfg.max_inner {
            iterations = it;
            let backup = adaptive.then(|| state.clone());
            self.sweep(&mut state, &mut traces)?;
            let fresh = Residuals::compute(&state, inst)?;
            update_multipliers(&mut state, &fresh);
            let t_new = fresh.sum_sq();
            let accepted = step_mu(&cfg.mu_schedule, &mut state, backup.as_ref(), t_prev, t_new);
            if record {
                trace.push(TraceRow {
                    iter: it,
                    objective: physical_objective(inst, &fresh.traces),
                    infeasibility: t_new,
                    mu: state.mu,
                    accepted,
                });
            }
            if accepted {
                t_prev = t_new;
                res = fresh;
            }
            traces.copy_from_slice(&res.traces);
            let objective = physical_objective(inst, &res.traces);
            history.push(objective);
            let stalled = cfg.stall_window == 0
                || (it >= cfg.stall_window && {
                    let old = history[it - cfg.stall_window];
                    (objective - old).abs() <= cfg.stall_tol * objective.abs().max(T::one())
                });
            if accepted && stalled && feasible(&state, t_new) {
                break;
            }
        }
        let reached_tol = feasible(&state, t_prev);
        Ok(Stage { state, residuals: res, iterations, reached_tol, trace })
    }
}

fn widen<T: Scalar>(prev: &AugLagState<T>, r: usize, noise: T, seed: u64) -> AugLagState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prev.r.n();
    let rms = prev.r.frobenius_norm() / T::lit(((n * prev.r.rank()) as f64).sqrt());
    let mut factor = prev.r.clone();
    while factor.rank() < r {
        let col: Vec<T> = (0..n).map(|_| noise * rms * T::lit(rng.gen_range(-1.0..1.0))).collect();
        factor = factor.with_column(&col).expect("column sized to n");
    }
    AugLagState { r: factor, ..prev.clone() }
}

/// Runs the full method on a network.
///
/// The first rank of the schedule is solved to the target infeasibility. Each
/// later stage starts from the previous one (see [`RankStart`]) and runs
/// until its factor is numerically rank one (up to phase) or the iteration
/// cap is hit. A rank-one wider stage is reported as converged. Otherwise the
/// status is rejected-rank: the wider factor is rounded to its leading rank-one
/// component and re-solved at rank one, and the better of that point and the
/// first stage is reported.
pub fn solve<T: Scalar>(net: &Network<T>, config: &SolveConfig<T>) -> Result<SolveReport<T>, SolveError> {
    let start = Instant::now();
    config.check()?;
    let errors: Vec<String> =
        validate(net).into_iter().filter(|d| d.severity == Severity::Error).map(|d| d.message).collect();
    if !errors.is_empty() {
        return Err(SolveError::Network(errors.join("; ")));
    }
    let inst = InstanceMatrices::build(net)?;
    let pool = match config.parallel {
        Parallelism::Parallel { workers } => Some(
            rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| SolveError::Pool(e.to_string()))?,
        ),
        Parallelism::Deterministic => None,
    };
    let colours = if pool.is_some() { row_colouring(&inst) } else { Vec::new() };
    let runner = Runner { inst: &inst, cfg: config, pool, colours };

    let initial = match &config.restart {
        Some(s) => {
            if s.r.n() != inst.n() || s.layout != inst.layout {
                return Err(SolveError::Restart(format!(
                    "state has n = {}, case needs n = {}",
                    s.r.n(),
                    inst.n()
                )));
            }
            s.clone()
        }
        None => {
            let mut s = init_state(&inst, config.rank_schedule[0], config.seed, config.mu0);
            s.nu = config.nu;
            s
        }
    };
    let first_rank = initial.r.rank();
    let rank_tol = config.tolerances.rank;
    let mut first = runner.run(initial, None, config.record_trace)?;
    let trace = std::mem::take(&mut first.trace);
    let mut stages = vec![stage_report(&inst, &first, rank_tol)];
    let mut iterations = first.iterations;
    let first_rank_one = certify::phase_rank(&first.state.r, rank_tol).0 <= 1;

    let mut status = if first.reached_tol { Status::Converged } else { Status::IterationLimit };
    let mut relaxation_objective = None;
    // the reported point: the first stage, unless a wider stage lands on a
    // rank-one point of its own
    let mut chosen = None;
    if first.reached_tol {
        let mut prev = first.state.clone();
        let mut widened = false;
        let last_rank = *config.rank_schedule.last().expect("checked non-empty");
        for (idx, &r) in config.rank_schedule.iter().enumerate().filter(|(_, &r)| r > first_rank) {
            widened = true;
            let seed = config.seed.wrapping_add(idx as u64);
            let init = match config.rank_start {
                RankStart::Warm => widen(&prev, r, config.warm_noise, seed),
                RankStart::Fresh => {
                    let mut s = init_state(&inst, r, seed, config.mu0);
                    s.nu = config.nu;
                    s
                }
            };
            let stage = runner.run(init, Some(rank_tol), false)?;
            iterations += stage.iterations;
            let rep = stage_report(&inst, &stage, rank_tol);
            relaxation_objective = Some(rep.objective);
            let rank = rep.rank_numeric;
            stages.push(rep);
            if rank <= 1 && stage.reached_tol {
                status = Status::Converged;
                chosen = Some(stage);
                break;
            }
            status = Status::RejectedRank;
            if rank < r || r == last_rank {
                // not confirmed: round the wider point to its leading rank-one
                // component and repair feasibility from there
                let seed_state = AugLagState { r: certify::rank_one_part(&stage.state.r), ..stage.state.clone() };
                let polish = runner.run(seed_state, None, false)?;
                iterations += polish.iterations;
                let rep = stage_report(&inst, &polish, rank_tol);
                let better = polish.reached_tol && rep.objective < stages[0].objective;
                stages.push(rep);
                if better {
                    chosen = Some(polish);
                }
                break;
            }
            prev = stage.state;
        }
        if !widened && !first_rank_one {
            status = Status::RejectedRank;
        }
    }

    let report_stage = chosen.unwrap_or(first);
    let (rank_numeric, _) = certify::phase_rank(&report_stage.state.r, rank_tol);
    let certificate = if report_stage.reached_tol {
        Some(certify::dual_certificate(&report_stage.state, &inst, &config.tolerances)?)
    } else {
        None
    };
    let voltages = if status == Status::Converged && rank_numeric <= 1 {
        certify::extract_voltages(&report_stage.state.r, net, rank_tol).ok()
    } else {
        None
    };
    Ok(SolveReport {
        objective: physical_objective(&inst, &report_stage.residuals.traces),
        t_final: report_stage.residuals.sum_sq(),
        iterations,
        rank_numeric,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        trace,
        stages,
        certificate,
        voltages,
        relaxation_objective,
        state: report_stage.state,
    })
}

fn stage_report<T: Scalar>(inst: &InstanceMatrices<T>, stage: &Stage<T>, rank_tol: f64) -> StageReport<T> {
    let (rank_numeric, sigma_ratio) = certify::phase_rank(&stage.state.r, rank_tol);
    StageReport {
        rank: stage.state.r.rank(),
        iterations: stage.iterations,
        objective: physical_objective(inst, &stage.residuals.traces),
        infeasibility: stage.residuals.sum_sq(),
        rank_numeric,
        sigma_ratio,
        reached_tol: stage.reached_tol,
    }
}
