use super::instance::{BusCost, Family, InstanceMatrices};
use super::{Factor, QfError, QuarticCoeffs};
use crate::auglag::AugLagState;
use crate::Scalar;

/// One scalar coordinate of the iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    /// Entry `R[row, col]` of the factor.
    R { row: usize, col: usize },
    /// Auxiliary variable `k` of a family.
    Aux(Family, usize),
    /// Squared apparent power of flow limit `k`.
    Z(usize),
}

/// Coefficients of the augmented Lagrangian along one coordinate, all other
/// coordinates held at their values in `state`. `traces` must hold
/// `tr(A_c R Rᵀ)` at the current factor, in layout order.
///
/// The constant term is exact: `p(x)` equals the Lagrangian with the
/// coordinate set to `x`.
pub fn univariate_restriction<T: Scalar>(
    inst: &InstanceMatrices<T>,
    state: &AugLagState<T>,
    traces: &[T],
    coord: Coord,
) -> Result<QuarticCoeffs<T>, QfError> {
    let lay = inst.layout;
    if traces.len() != lay.len() {
        return Err(QfError::Dimension { expected: lay.len(), got: traces.len() });
    }
    let total = crate::auglag::eval_with_traces(state, inst, traces);
    let rho = state.penalty();
    let mut q = match coord {
        Coord::R { row, col } => {
            if row >= inst.n() {
                return Err(QfError::Index { what: "row", index: row, len: inst.n() });
            }
            if col >= state.r.rank() {
                return Err(QfError::Index { what: "column", index: col, len: state.r.rank() });
            }
            let mut betas = Vec::new();
            r_restriction(inst, &state.aux, &state.lambda, rho, &state.r, traces, row, col, &mut betas)
        }
        Coord::Aux(fam, k) => {
            let len = lay.range(fam).len();
            if k >= len {
                return Err(QfError::Index { what: "auxiliary", index: k, len });
            }
            aux_restriction(inst, state, traces, fam, k)
        }
        Coord::Z(k) => {
            if k >= lay.n_flow {
                return Err(QfError::Index { what: "flow limit", index: k, len: lay.n_flow });
            }
            z_restriction(state, k)
        }
    };
    let x0 = match coord {
        Coord::R { row, col } => state.r.get(row, col),
        Coord::Aux(fam, k) => state.aux[lay.index(fam, k)],
        Coord::Z(k) => state.z[k],
    };
    // fold everything independent of the coordinate into a0
    q.a0 = T::zero();
    q.a0 = total - q.eval(x0);
    Ok(q)
}

/// Restriction to `R[i, c]` without the constant term. On return `betas`
/// holds the linear coefficient `β` of every constraint touching row `i`, in
/// the order of `inst.rows().spans(i)`, so the caller can update the traces
/// after moving the coordinate.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn r_restriction<T: Scalar>(
    inst: &InstanceMatrices<T>,
    aux: &[T],
    lambda: &[T],
    rho: T,
    r: &Factor<T>,
    traces: &[T],
    i: usize,
    c: usize,
    betas: &mut Vec<T>,
) -> QuarticCoeffs<T> {
    let rows = inst.rows();
    let col = r.col(c);
    let x0 = col[i];
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut q = QuarticCoeffs::default();
    betas.clear();
    for span in rows.spans(i) {
        let alpha = span.diag;
        let mut beta = T::zero();
        for &(j, v) in rows.neighbours(span) {
            beta += v * col[j];
        }
        beta *= two;
        betas.push(beta);
        let gamma = traces[span.cons] - (alpha * x0 + beta) * x0;
        // residual aux − trace = p x² + q x + s
        let (p, qq, s) = (-alpha, -beta, aux[span.cons] - gamma);
        let lam = lambda[span.cons];
        q.a4 += half * rho * p * p;
        q.a3 += rho * p * qq;
        q.a2 += half * rho * (qq * qq + two * p * s) - lam * p;
        q.a1 += rho * qq * s - lam * qq;
    }
    q
}

pub(crate) fn aux_restriction<T: Scalar>(
    inst: &InstanceMatrices<T>,
    state: &AugLagState<T>,
    traces: &[T],
    fam: Family,
    k: usize,
) -> QuarticCoeffs<T> {
    let lay = inst.layout;
    let idx = lay.index(fam, k);
    let rho = state.penalty();
    let (lam, tr) = (state.lambda[idx], traces[idx]);
    match fam {
        Family::T | Family::G | Family::H => {
            let cost = if fam == Family::T { inst.costs[k] } else { None };
            let (a2, a1) = box_quadratic(rho, lam, tr, cost);
            QuarticCoeffs { a2, a1, ..Default::default() }
        }
        Family::U | Family::V => {
            let other = if fam == Family::U { Family::V } else { Family::U };
            flow_quartic(rho, lam, tr, state.lambda_z[k], state.z[k], state.aux[lay.index(other, k)])
        }
    }
}

pub(crate) fn z_restriction<T: Scalar>(state: &AugLagState<T>, k: usize) -> QuarticCoeffs<T> {
    let lay = state.layout;
    let u = state.aux[lay.index(Family::U, k)];
    let v = state.aux[lay.index(Family::V, k)];
    let (a2, a1) = z_quadratic(state.penalty(), state.lambda_z[k], u, v);
    QuarticCoeffs { a2, a1, ..Default::default() }
}

/// `(a2, a1)` of a boxed auxiliary tied to a trace, plus its cost if any.
#[inline]
pub(crate) fn box_quadratic<T: Scalar>(rho: T, lam: T, tr: T, cost: Option<BusCost<T>>) -> (T, T) {
    let (mut a2, mut a1) = (T::lit(0.5) * rho, -lam - rho * tr);
    if let Some(c) = cost {
        a2 += c.q2;
        a1 += c.q1;
    }
    (a2, a1)
}

/// Quartic in one flow variable; `other` is the companion flow of the same
/// limit (`v` when moving `u` and vice versa).
#[inline]
pub(crate) fn flow_quartic<T: Scalar>(rho: T, lam: T, tr: T, lam_z: T, z: T, other: T) -> QuarticCoeffs<T> {
    let half = T::lit(0.5);
    let c = z - other * other;
    QuarticCoeffs { a4: half * rho, a2: half * rho + lam_z - rho * c, a1: -lam - rho * tr, ..Default::default() }
}

#[inline]
pub(crate) fn z_quadratic<T: Scalar>(rho: T, lam_z: T, u: T, v: T) -> (T, T) {
    (T::lit(0.5) * rho, -lam_z - rho * (u * u + v * v))
}
