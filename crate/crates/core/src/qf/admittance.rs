use num_complex::Complex;
use serde::Serialize;

use super::{CoefMatrix, Factor, QfError};
use crate::case_io::{Branch, Network};
use crate::Scalar;

/// Two-port admittances of a Π-model branch with the tap on the from side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance<T> {
    pub ff: Complex<T>,
    pub ft: Complex<T>,
    pub tf: Complex<T>,
    pub tt: Complex<T>,
}

pub fn branch_admittance<T: Scalar>(br: &Branch<T>, index: usize) -> Result<BranchAdmittance<T>, QfError> {
    let z = Complex::new(br.r, br.x);
    if z.norm_sqr() <= T::zero() {
        return Err(QfError::SingularBranch { branch: index });
    }
    let ys = z.inv();
    let half_b = Complex::new(T::zero(), br.bc / T::lit(2.0));
    let tap = Complex::from_polar(br.tap, br.shift);
    let tt = ys + half_b;
    Ok(BranchAdmittance {
        ff: tt / (br.tap * br.tap),
        ft: -ys / tap.conj(),
        tf: -ys / tap,
        tt,
    })
}

/// Sparse complex bus admittance matrix, one merged row per bus.
#[derive(Debug, Clone)]
pub struct Ybus<T> {
    pub rows: Vec<Vec<(usize, Complex<T>)>>,
}

impl<T: Scalar> Ybus<T> {
    pub fn assemble(net: &Network<T>) -> Result<Self, QfError> {
        let nb = net.n_bus();
        let mut rows: Vec<Vec<(usize, Complex<T>)>> = vec![Vec::new(); nb];
        for (k, bus) in net.buses.iter().enumerate() {
            rows[k].push((k, Complex::new(bus.gs, bus.bs)));
        }
        for (l, br) in net.branches.iter().enumerate() {
            let f = net.bus_index(br.from).ok_or(QfError::UnknownBus(br.from))?;
            let t = net.bus_index(br.to).ok_or(QfError::UnknownBus(br.to))?;
            let y = branch_admittance(br, l)?;
            rows[f].push((f, y.ff));
            rows[f].push((t, y.ft));
            rows[t].push((f, y.tf));
            rows[t].push((t, y.tt));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, Complex<T>)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            *row = merged;
        }
        Ok(Ybus { rows })
    }

    pub fn get(&self, k: usize, i: usize) -> Complex<T> {
        self.rows[k].iter().find(|e| e.0 == i).map_or(Complex::new(T::zero(), T::zero()), |e| e.1)
    }
}

/// Accumulates the entries of the matrices whose quadratic forms give
/// `Re(V_k · conj(w · V_i))` and `Im(...)` in the stacked real variable
/// `x = (Re V, Im V)`.
fn push_terms<T: Scalar>(
    nb: usize,
    k: usize,
    i: usize,
    w: Complex<T>,
    p: &mut Vec<(usize, usize, T)>,
    q: &mut Vec<(usize, usize, T)>,
) {
    if i == k {
        p.push((k, k, w.re));
        p.push((k + nb, k + nb, w.re));
        q.push((k, k, -w.im));
        q.push((k + nb, k + nb, -w.im));
        return;
    }
    let half = T::lit(0.5);
    let (g, b) = (w.re * half, w.im * half);
    p.push((k, i, g));
    p.push((k + nb, i + nb, g));
    p.push((k, i + nb, -b));
    p.push((i, k + nb, b));
    q.push((k, i, -b));
    q.push((k + nb, i + nb, -b));
    q.push((k, i + nb, -g));
    q.push((i, k + nb, g));
}

fn injection_matrices<T: Scalar>(
    nb: usize,
    k: usize,
    row: &[(usize, Complex<T>)],
) -> Result<(CoefMatrix<T>, CoefMatrix<T>), QfError> {
    let (mut p, mut q) = (Vec::new(), Vec::new());
    for &(i, w) in row {
        push_terms(nb, k, i, w, &mut p, &mut q);
    }
    Ok((CoefMatrix::from_entries(2 * nb, p)?, CoefMatrix::from_entries(2 * nb, q)?))
}

/// `M_k`: selects `x_k² + x_{k+|N|}²`.
pub fn magnitude_matrix<T: Scalar>(nb: usize, k: usize) -> Result<CoefMatrix<T>, QfError> {
    CoefMatrix::from_entries(2 * nb, [(k, k, T::one()), (k + nb, k + nb, T::one())])
}

/// Real coefficient matrices of bus `k`: active injection `Y_k`, reactive
/// injection `Ȳ_k` and squared voltage magnitude `M_k`.
pub fn build_bus_matrices<T: Scalar>(
    net: &Network<T>,
    k: usize,
) -> Result<(CoefMatrix<T>, CoefMatrix<T>, CoefMatrix<T>), QfError> {
    if k >= net.n_bus() {
        return Err(QfError::Index { what: "bus", index: k, len: net.n_bus() });
    }
    let ybus = Ybus::assemble(net)?;
    bus_matrices_from_ybus(&ybus, net.n_bus(), k)
}

pub(crate) fn bus_matrices_from_ybus<T: Scalar>(
    ybus: &Ybus<T>,
    nb: usize,
    k: usize,
) -> Result<(CoefMatrix<T>, CoefMatrix<T>, CoefMatrix<T>), QfError> {
    let (y, ybar) = injection_matrices(nb, k, &ybus.rows[k])?;
    Ok((y, ybar, magnitude_matrix(nb, k)?))
}

/// Precomputed scalars of one branch end. With `s1 = x_l² + x_{l+N}²`,
/// `s2 = 2(x_l x_m + x_{l+N} x_{m+N})` and `s3 = 2(x_l x_{m+N} − x_m x_{l+N})`,
/// the active flow is `pa·s1 + pc·s2 + pd·s3` and the reactive flow
/// `qa·s1 + qc·s2 + qd·s3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndCoeffs<T> {
    pub nb: usize,
    /// Bus position at the metered end.
    pub l: usize,
    /// Bus position at the far end.
    pub m: usize,
    pub p: [T; 3],
    pub q: [T; 3],
}

impl<T: Scalar> EndCoeffs<T> {
    fn new(nb: usize, l: usize, m: usize, own: Complex<T>, mutual: Complex<T>) -> Self {
        let half = T::lit(0.5);
        EndCoeffs {
            nb,
            l,
            m,
            p: [own.re, mutual.re * half, -mutual.im * half],
            q: [-own.im, -mutual.im * half, -mutual.re * half],
        }
    }

    #[inline]
    fn basis(&self, x: &[T]) -> [T; 3] {
        let (l, m, nb) = (self.l, self.m, self.nb);
        let (al, bl, am, bm) = (x[l], x[l + nb], x[m], x[m + nb]);
        let two = T::lit(2.0);
        [al * al + bl * bl, two * (al * am + bl * bm), two * (al * bm - am * bl)]
    }

    /// `(tr(Z xxᵀ), tr(Z̄ xxᵀ))` summed over the columns of `r`.
    pub fn flow(&self, r: &Factor<T>) -> (T, T) {
        let (mut p, mut q) = (T::zero(), T::zero());
        for c in 0..r.rank() {
            let s = self.basis(r.col(c));
            p += self.p[0] * s[0] + self.p[1] * s[1] + self.p[2] * s[2];
            q += self.q[0] * s[0] + self.q[1] * s[1] + self.q[2] * s[2];
        }
        (p, q)
    }

    fn matrix(&self, c: [T; 3]) -> Result<CoefMatrix<T>, QfError> {
        let (l, m, nb) = (self.l, self.m, self.nb);
        CoefMatrix::from_entries(
            2 * nb,
            [
                (l, l, c[0]),
                (l + nb, l + nb, c[0]),
                (l, m, c[1]),
                (l + nb, m + nb, c[1]),
                (l, m + nb, c[2]),
                (m, l + nb, -c[2]),
            ],
        )
    }
}

/// Flow matrices of one branch end.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrices<T> {
    pub p: CoefMatrix<T>,
    pub q: CoefMatrix<T>,
    pub coeffs: EndCoeffs<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchMatrices<T> {
    pub from: FlowMatrices<T>,
    /// Present when the branch carries a thermal limit.
    pub to: Option<FlowMatrices<T>>,
}

fn flow_matrices<T: Scalar>(coeffs: EndCoeffs<T>) -> Result<FlowMatrices<T>, QfError> {
    Ok(FlowMatrices { p: coeffs.matrix(coeffs.p)?, q: coeffs.matrix(coeffs.q)?, coeffs })
}

pub(crate) fn end_coeffs<T: Scalar>(
    net: &Network<T>,
    br: &Branch<T>,
    index: usize,
) -> Result<(EndCoeffs<T>, EndCoeffs<T>), QfError> {
    let f = net.bus_index(br.from).ok_or(QfError::UnknownBus(br.from))?;
    let t = net.bus_index(br.to).ok_or(QfError::UnknownBus(br.to))?;
    let y = branch_admittance(br, index)?;
    let nb = net.n_bus();
    Ok((EndCoeffs::new(nb, f, t, y.ff, y.ft), EndCoeffs::new(nb, t, f, y.tt, y.tf)))
}

/// Flow matrices `Y_lm`, `Ȳ_lm` at the from end and, for limited branches,
/// `Υ_lm`, `Ῡ_lm` at the to end.
pub fn build_branch_matrices<T: Scalar>(net: &Network<T>, branch: &Branch<T>) -> Result<BranchMatrices<T>, QfError> {
    let index = net.branches.iter().position(|b| b == branch).unwrap_or(usize::MAX);
    let (from, to) = end_coeffs(net, branch, index)?;
    let to = if branch.smax > T::zero() { Some(flow_matrices(to)?) } else { None };
    Ok(BranchMatrices { from: flow_matrices(from)?, to })
}
