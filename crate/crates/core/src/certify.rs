//! Rank tests, voltage extraction, direct power-flow residuals and the dual
//! optimality certificate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::Serialize;

use crate::auglag::{AugLagState, Family, Residuals};
use crate::case_io::Network;
use crate::qf::{CoefMatrix, Factor, InstanceMatrices, QfError, Ybus};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertifyError {
    #[error("factor has numerical rank {0}; voltages are defined only for rank one")]
    RankTooHigh(usize),
    #[error("voltage vector has {got} entries for {expected} buses")]
    Length { expected: usize, got: usize },
    #[error("smallest eigenvalue did not converge")]
    EigenNonConvergence,
    #[error(transparent)]
    Qf(#[from] QfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Rank one and the dual conditions hold: a global minimizer.
    CertifiedGlobal,
    /// The dual conditions hold but the factor is not numerically rank one.
    RankDeficientOnly,
    NotCertified,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::CertifiedGlobal => "certified-global",
            Verdict::RankDeficientOnly => "rank-deficient-only",
            Verdict::NotCertified => "not-certified",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative singular-value threshold of the rank test.
    pub rank: f64,
    /// Stationarity threshold relative to `‖S‖_F`.
    pub stationarity: f64,
    /// Eigenvalue threshold relative to `‖S‖_F`.
    pub eigen: f64,
    /// A box constraint within this distance of a bound counts as active.
    pub active: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: 1e-4, stationarity: 1e-6, eigen: 1e-8, active: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Complex rank of the factor, see [`phase_rank`].
    pub rank_numeric: usize,
    /// `σ₂/σ₁` of the factor read as a complex matrix, 0 for a single column.
    pub sigma_ratio: f64,
    /// `‖S R‖_F`.
    pub stationarity_norm: f64,
    pub min_eig_s: f64,
    pub s_norm: f64,
    pub verdict: Verdict,
}

/// Singular values of `R`, descending, from the eigenvalues of `RᵀR`.
fn singular_values<T: Scalar>(r: &Factor<T>) -> (Vec<f64>, DMatrix<f64>) {
    let g = r.gram();
    let k = r.rank();
    let m = DMatrix::from_fn(k, k, |i, j| g[i][j].to_f64_lossy());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sv = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let vecs = DMatrix::from_fn(k, k, |i, j| eig.eigenvectors[(i, order[j])]);
    (sv, vecs)
}

/// Number of singular values at least `rel_tol·σ₁`, and `σ₂/σ₁`. A zero
/// factor has rank 0 and ratio 0.
pub fn numerical_rank<T: Scalar>(r: &Factor<T>, rel_tol: f64) -> (usize, f64) {
    let (sv, _) = singular_values(r);
    let s1 = sv.first().copied().unwrap_or(0.0);
    if s1 <= 0.0 {
        return (0, 0.0);
    }
    let rank = sv.iter().filter(|s| **s >= rel_tol * s1).count();
    let ratio = sv.get(1).map_or(0.0, |s2| s2 / s1);
    (rank, ratio)
}

/// Rank of `R` read as an `|N| × r` complex factor with rows
/// `R[k] + j·R[k + |N|]`, and the ratio of its two leading singular values.
///
/// Every trace is unchanged when all voltages rotate by a common phase, so
/// `x xᵀ + (Jx)(Jx)ᵀ` with `Jx = (−Im V, Re V)` is as good as `x xᵀ`. The real
/// rank of such a factor is two while the complex one is one; this test is
/// blind to that rotation. Computed from the real rank of `[R, JR]`, whose
/// Gram eigenvalues are those of the complex Gram matrix, each twice.
pub fn phase_rank<T: Scalar>(r: &Factor<T>, rel_tol: f64) -> (usize, f64) {
    let (sv, _) = singular_values(&with_rotations(r));
    let sv: Vec<f64> = sv.into_iter().step_by(2).collect();
    let s1 = sv.first().copied().unwrap_or(0.0);
    if s1 <= 0.0 {
        return (0, 0.0);
    }
    let rank = sv.iter().filter(|s| **s >= rel_tol * s1).count();
    (rank, sv.get(1).map_or(0.0, |s2| s2 / s1))
}

/// Bus voltages from a factor of complex rank one (see [`phase_rank`]).
///
/// A factor of real rank one gives `x = σ₁·u₁` split into real and imaginary
/// halves, signed so the reference bus angle lies in `(−π/2, π/2]`. Otherwise
/// the leading complex singular vector is used, rotated so the reference bus
/// voltage is real and positive.
pub fn extract_voltages<T: Scalar>(
    r: &Factor<T>,
    net: &Network<T>,
    rel_tol: f64,
) -> Result<Vec<Complex<T>>, CertifyError> {
    let nb = net.n_bus();
    if r.n() != 2 * nb {
        return Err(CertifyError::Length { expected: 2 * nb, got: r.n() / 2 });
    }
    let k = net.reference_bus();
    let out = |x: &[f64]| (0..nb).map(|i| Complex::new(T::lit(x[i]), T::lit(x[i + nb]))).collect();
    if numerical_rank(r, rel_tol).0 <= 1 {
        let mut x = leading_direction(r);
        let (re, im) = (x[k], x[k + nb]);
        if re < 0.0 || (re == 0.0 && im < 0.0) {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        return Ok(out(&x));
    }
    let (rank, _) = phase_rank(r, rel_tol);
    if rank > 1 {
        return Err(CertifyError::RankTooHigh(rank));
    }
    let x = rank_one_part(r);
    let v: Vec<Complex<f64>> = (0..nb).map(|i| Complex::new(x.get(i, 0).to_f64_lossy(), x.get(i + nb, 0).to_f64_lossy())).collect();
    let phase = if v[k].norm() > 0.0 { v[k].conj() / v[k].norm() } else { Complex::new(1.0, 0.0) };
    let rotated: Vec<f64> = v.iter().map(|z| (z * phase).re).chain(v.iter().map(|z| (z * phase).im)).collect();
    Ok(out(&rotated))
}

/// Single-column factor `x` whose `x xᵀ` is the best complex-rank-one
/// approximation of `R Rᵀ`: all traces of `x xᵀ` match those of the leading
/// complex component of `R`. The global phase of `x` is arbitrary.
pub fn rank_one_part<T: Scalar>(r: &Factor<T>) -> Factor<T> {
    // each complex direction spans a pair {x, Jx} of equal singular values
    // in [R, JR]; any unit vector of the pair is a phase rotation of x
    let x = leading_direction(&with_rotations(r));
    Factor::from_vector(x.into_iter().map(T::lit).collect())
}

/// `R v₁ = σ₁ u₁` for the leading right singular vector `v₁`.
fn leading_direction<T: Scalar>(r: &Factor<T>) -> Vec<f64> {
    let (_, vecs) = singular_values(r);
    let mut x = vec![0.0; r.n()];
    for c in 0..r.rank() {
        let w = vecs[(c, 0)];
        for (xi, ri) in x.iter_mut().zip(r.col(c)) {
            *xi += w * ri.to_f64_lossy();
        }
    }
    x
}

/// `[R, JR]`: every column together with its quarter-turn phase rotation.
fn with_rotations<T: Scalar>(r: &Factor<T>) -> Factor<T> {
    let n = r.n();
    let nb = n / 2;
    let mut data: Vec<T> = r.as_slice().to_vec();
    for c in 0..r.rank() {
        let col = r.col(c);
        data.extend((0..nb).map(|k| -col[k + nb]));
        data.extend((0..nb).map(|k| col[k]));
    }
    Factor::from_col_major(n, 2 * r.rank(), data).expect("sized by construction")
}

/// Operating point implied by a voltage profile, with the violation of every
/// limit of the original problem (zero when satisfied).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcopfResiduals {
    /// Generation per bus, injection plus load (p.u.).
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub vm: Vec<f64>,
    /// Apparent power at both ends of every branch (p.u.).
    pub flow_from: Vec<f64>,
    pub flow_to: Vec<f64>,
    pub p_violation: Vec<f64>,
    pub q_violation: Vec<f64>,
    pub v_violation: Vec<f64>,
    /// Thermal violation per branch, over the metered ends.
    pub flow_violation: Vec<f64>,
    pub max_violation: f64,
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    (lo - x).max(x - hi).max(0.0)
}

/// Evaluates the power-flow equations at `v` and reports limit violations.
/// Thermal limits are checked where the solver meters them: the from end of
/// every limited branch and the to end of limited transformers.
pub fn acopf_residuals<T: Scalar>(v: &[Complex<T>], net: &Network<T>) -> Result<AcopfResiduals, CertifyError> {
    let nb = net.n_bus();
    if v.len() != nb {
        return Err(CertifyError::Length { expected: nb, got: v.len() });
    }
    let c = |z: Complex<T>| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy());
    let v: Vec<Complex<f64>> = v.iter().map(|z| c(*z)).collect();
    let ybus = Ybus::assemble(net)?;
    let mut pg = Vec::with_capacity(nb);
    let mut qg = Vec::with_capacity(nb);
    let (mut pv, mut qv, mut vv, mut vm) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, bus) in net.buses.iter().enumerate() {
        let i: Complex<f64> = ybus.rows[k].iter().map(|&(j, y)| c(y) * v[j]).sum();
        let s = v[k] * i.conj();
        let p = s.re + bus.pd.to_f64_lossy();
        let q = s.im + bus.qd.to_f64_lossy();
        let (mut pmin, mut pmax, mut qmin, mut qmax) = (0.0, 0.0, 0.0, 0.0);
        for g in net.gens_at(k) {
            pmin += g.pmin.to_f64_lossy();
            pmax += g.pmax.to_f64_lossy();
            qmin += g.qmin.to_f64_lossy();
            qmax += g.qmax.to_f64_lossy();
        }
        pv.push(excess(p, pmin, pmax));
        qv.push(excess(q, qmin, qmax));
        let m = v[k].norm();
        vv.push(excess(m, bus.vmin.to_f64_lossy(), bus.vmax.to_f64_lossy()));
        vm.push(m);
        pg.push(p);
        qg.push(q);
    }
    let (mut ff, mut ft, mut fv) = (Vec::new(), Vec::new(), Vec::new());
    for (l, br) in net.branches.iter().enumerate() {
        let y = crate::qf::branch_admittance(br, l)?;
        let f = net.bus_index(br.from).ok_or(QfError::UnknownBus(br.from))?;
        let t = net.bus_index(br.to).ok_or(QfError::UnknownBus(br.to))?;
        let sf = (v[f] * (c(y.ff) * v[f] + c(y.ft) * v[t]).conj()).norm();
        let st = (v[t] * (c(y.tf) * v[f] + c(y.tt) * v[t]).conj()).norm();
        let smax = br.smax.to_f64_lossy();
        let viol = if smax > 0.0 {
            let to = if br.is_transformer() { st } else { 0.0 };
            (sf.max(to) - smax).max(0.0)
        } else {
            0.0
        };
        ff.push(sf);
        ft.push(st);
        fv.push(viol);
    }
    let max_violation = pv.iter().chain(&qv).chain(&vv).chain(&fv).fold(0.0f64, |a, b| a.max(*b));
    Ok(AcopfResiduals {
        pg,
        qg,
        vm,
        flow_from: ff,
        flow_to: ft,
        p_violation: pv,
        q_violation: qv,
        v_violation: vv,
        flow_violation: fv,
        max_violation,
    })
}

/// Smallest eigenvalue of a sparse symmetric matrix: dense solve up to
/// dimension 1000, shifted power iteration beyond.
pub fn min_eigenvalue<T: Scalar>(s: &CoefMatrix<T>) -> Result<f64, CertifyError> {
    let n = s.n();
    if n == 0 {
        return Ok(0.0);
    }
    if n <= 1000 {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for &(i, j, v) in s.entries() {
            m[(i, j)] = v.to_f64_lossy();
            m[(j, i)] = v.to_f64_lossy();
        }
        return Ok(SymmetricEigen::new(m).eigenvalues.min());
    }
    // ‖S‖_F bounds the spectral radius, so B·I − S is positive semidefinite
    // and its dominant eigenvalue is B − λ_min.
    let b = s.frobenius_norm().to_f64_lossy();
    if b == 0.0 {
        return Ok(0.0);
    }
    let entries: Vec<(usize, usize, f64)> = s.entries().iter().map(|&(i, j, v)| (i, j, v.to_f64_lossy())).collect();
    let apply = |x: &DVector<f64>| {
        let mut y = x * b;
        for &(i, j, v) in &entries {
            y[i] -= v * x[j];
            if i != j {
                y[j] -= v * x[i];
            }
        }
        y
    };
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..100_000 {
        let y = apply(&x);
        let next = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(b);
        }
        x = y / norm;
        if (next - est).abs() <= 1e-12 * b {
            return Ok(b - next);
        }
        est = next;
    }
    Err(CertifyError::EigenNonConvergence)
}

/// Checks `S = Q + Σ λᵢ Aᵢ` against the factor: `S ⪰ 0` and `S R = 0`
/// certify global optimality of `R Rᵀ` for `min tr(QW) s.t. tr(AᵢW) = bᵢ`.
pub fn certify_parts<T: Scalar>(
    q: &CoefMatrix<T>,
    constraints: &[(T, &CoefMatrix<T>)],
    r: &Factor<T>,
    tol: &Tolerances,
) -> Result<Certificate, CertifyError> {
    certify_with_rank(q, constraints, r, tol, numerical_rank(r, tol.rank))
}

fn certify_with_rank<T: Scalar>(
    q: &CoefMatrix<T>,
    constraints: &[(T, &CoefMatrix<T>)],
    r: &Factor<T>,
    tol: &Tolerances,
    (rank, ratio): (usize, f64),
) -> Result<Certificate, CertifyError> {
    let mut s = q.clone();
    for &(lambda, a) in constraints {
        if lambda != T::zero() {
            s = s.add_scaled(lambda, a)?;
        }
    }
    let mut stat = 0.0;
    for c in 0..r.rank() {
        let y = s.mul_vec(r.col(c))?;
        stat += y.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
    }
    let stat = stat.sqrt();
    let s_norm = s.frobenius_norm().to_f64_lossy();
    let min_eig = min_eigenvalue(&s)?;
    let dual_ok = min_eig >= -tol.eigen * s_norm && stat <= tol.stationarity * s_norm;
    let verdict = match (dual_ok, rank <= 1) {
        (true, true) => Verdict::CertifiedGlobal,
        (true, false) => Verdict::RankDeficientOnly,
        (false, _) => Verdict::NotCertified,
    };
    Ok(Certificate { rank_numeric: rank, sigma_ratio: ratio, stationarity_norm: stat, min_eig_s: min_eig, s_norm, verdict })
}

/// Dual certificate of a solver state.
///
/// The objective is linearized at the current injections,
/// `Q = Σ_k f_k'(t_k) Y_k`. With the updated multipliers `λ̃ = λ − ρ·r`, a box
/// constraint on `t, g, h` enters with `λ̃` (minus the cost slope for `t`) only
/// when its variable sits within `tol.active` of a bound; a flow limit enters
/// through `Y_lm, Ȳ_lm` with `λ̃ᵘ, λ̃ᵛ` only when `z` sits at its rating.
pub fn dual_certificate<T: Scalar>(
    state: &AugLagState<T>,
    inst: &InstanceMatrices<T>,
    tol: &Tolerances,
) -> Result<Certificate, CertifyError> {
    let res = Residuals::compute(state, inst)?;
    let lay = inst.layout;
    let rho = state.penalty();
    let act = T::lit(tol.active);
    let eff = |idx: usize| state.lambda[idx] - rho * res.aux[idx];
    let active = |idx: usize| {
        let a = state.aux[idx];
        (a - inst.lo[idx]).abs() <= act || (inst.hi[idx] - a).abs() <= act
    };

    let mut q = CoefMatrix::zeros(inst.n());
    let mut cons: Vec<(T, &CoefMatrix<T>)> = Vec::new();
    for k in 0..lay.n_bus {
        let idx = lay.index(Family::T, k);
        let slope = inst.costs[k].map_or(T::zero(), |c| c.derivative(state.aux[idx]));
        if slope != T::zero() {
            q = q.add_scaled(slope, &inst.matrices()[idx])?;
        }
        if active(idx) {
            cons.push((eff(idx) - slope, &inst.matrices()[idx]));
        }
        for fam in [Family::G, Family::H] {
            let idx = lay.index(fam, k);
            if active(idx) {
                cons.push((eff(idx), &inst.matrices()[idx]));
            }
        }
    }
    for k in 0..lay.n_flow {
        if (inst.z_hi[k] - state.z[k]).abs() <= act {
            for fam in [Family::U, Family::V] {
                let idx = lay.index(fam, k);
                cons.push((eff(idx), &inst.matrices()[idx]));
            }
        }
    }
    // the lifted problem is invariant under a global phase, so rank counts
    // complex directions
    certify_with_rank(&q, &cons, &state.r, tol, phase_rank(&state.r, tol.rank))
}
