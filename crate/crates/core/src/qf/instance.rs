use serde::Serialize;

use super::admittance::{bus_matrices_from_ybus, end_coeffs, EndCoeffs, Ybus};
use super::{CoefMatrix, Factor, QfError};
use crate::case_io::Network;
use crate::Scalar;

/// Families of auxiliary variables tied to a trace `tr(A W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// Active injection, one per bus.
    T,
    /// Reactive injection, one per bus.
    G,
    /// Squared voltage magnitude, one per bus.
    H,
    /// Active flow, one per limited branch end.
    U,
    /// Reactive flow, one per limited branch end.
    V,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::T, Family::G, Family::H, Family::U, Family::V];
}

/// Offsets of the families inside the flat `[t | g | h | u | v]` layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub n_bus: usize,
    pub n_flow: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        3 * self.n_bus + 2 * self.n_flow
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, fam: Family) -> std::ops::Range<usize> {
        let (nb, nf) = (self.n_bus, self.n_flow);
        match fam {
            Family::T => 0..nb,
            Family::G => nb..2 * nb,
            Family::H => 2 * nb..3 * nb,
            Family::U => 3 * nb..3 * nb + nf,
            Family::V => 3 * nb + nf..3 * nb + 2 * nf,
        }
    }

    pub fn index(&self, fam: Family, k: usize) -> usize {
        self.range(fam).start + k
    }

    pub fn family_of(&self, idx: usize) -> (Family, usize) {
        for fam in Family::ALL {
            let r = self.range(fam);
            if r.contains(&idx) {
                return (fam, idx - r.start);
            }
        }
        panic!("index {idx} outside layout of length {}", self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchEnd {
    From,
    To,
}

/// A thermal limit `u² + v² ≤ smax²` on one branch end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLimit<T> {
    pub branch: usize,
    pub end: BranchEnd,
    pub smax_sq: T,
    pub coeffs: EndCoeffs<T>,
}

/// Quadratic generation cost at one bus as a function of its injection
/// variable `t` (per unit): `q2·t² + q1·t + q0` in $/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusCost<T> {
    pub q2: T,
    pub q1: T,
    pub q0: T,
}

impl<T: Scalar> BusCost<T> {
    #[inline]
    pub fn eval(&self, t: T) -> T {
        (self.q2 * t + self.q1) * t + self.q0
    }

    #[inline]
    pub fn derivative(&self, t: T) -> T {
        T::lit(2.0) * self.q2 * t + self.q1
    }
}

/// Nonzeros of one constraint matrix restricted to row `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSpan<T> {
    pub cons: usize,
    pub diag: T,
    pub start: usize,
    pub end: usize,
}

/// Per-coordinate incidence: for every row `i` of the lifted variable, the
/// constraints whose matrix touches it, their diagonal entry and off-diagonal
/// neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIndex<T> {
    row_ptr: Vec<usize>,
    spans: Vec<RowSpan<T>>,
    nbrs: Vec<(usize, T)>,
}

impl<T: Scalar> RowIndex<T> {
    fn build(n: usize, mats: &[CoefMatrix<T>]) -> Self {
        let mut per_row: Vec<Vec<(usize, Option<usize>, T)>> = vec![Vec::new(); n];
        for (c, a) in mats.iter().enumerate() {
            for &(i, j, v) in a.entries() {
                if i == j {
                    per_row[i].push((c, None, v));
                } else {
                    per_row[i].push((c, Some(j), v));
                    per_row[j].push((c, Some(i), v));
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut spans = Vec::new();
        let mut nbrs = Vec::new();
        row_ptr.push(0);
        for mut items in per_row {
            items.sort_by_key(|e| (e.0, e.1));
            let mut k = 0;
            while k < items.len() {
                let cons = items[k].0;
                let mut span = RowSpan { cons, diag: T::zero(), start: nbrs.len(), end: nbrs.len() };
                while k < items.len() && items[k].0 == cons {
                    match items[k].1 {
                        None => span.diag += items[k].2,
                        Some(j) => nbrs.push((j, items[k].2)),
                    }
                    k += 1;
                }
                span.end = nbrs.len();
                spans.push(span);
            }
            row_ptr.push(spans.len());
        }
        RowIndex { row_ptr, spans, nbrs }
    }

    #[inline]
    pub fn spans(&self, i: usize) -> &[RowSpan<T>] {
        &self.spans[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    #[inline]
    pub fn neighbours(&self, span: &RowSpan<T>) -> &[(usize, T)] {
        &self.nbrs[span.start..span.end]
    }
}

/// Everything the solver needs about one instance: the constraint matrices
/// in flat `[Y_k | Ȳ_k | M_k | Y_lm | Ȳ_lm]` order, boxes, demands and costs.
#[derive(Debug, Clone)]
pub struct InstanceMatrices<T> {
    pub layout: Layout,
    pub base_mva: T,
    mats: Vec<CoefMatrix<T>>,
    pub flows: Vec<FlowLimit<T>>,
    pub pd: Vec<T>,
    pub qd: Vec<T>,
    /// Lower bounds in the flat layout; unboxed entries are `-inf`.
    pub lo: Vec<T>,
    /// Upper bounds in the flat layout; unboxed entries are `+inf`.
    pub hi: Vec<T>,
    /// Upper bound of each `z`, the squared rating.
    pub z_hi: Vec<T>,
    pub costs: Vec<Option<BusCost<T>>>,
    /// Number of generators aggregated at each bus.
    pub gen_count: Vec<usize>,
    rows: RowIndex<T>,
}

impl<T: Scalar> InstanceMatrices<T> {
    /// Lifts a network. Every limited branch is metered at its from end; a
    /// transformer (off-nominal tap or phase shift) is metered at both ends.
    pub fn build(net: &Network<T>) -> Result<Self, QfError> {
        let nb = net.n_bus();
        let n = 2 * nb;
        let ybus = Ybus::assemble(net)?;

        let mut ys = Vec::with_capacity(nb);
        let mut ybars = Vec::with_capacity(nb);
        let mut ms = Vec::with_capacity(nb);
        for k in 0..nb {
            let (y, ybar, m) = bus_matrices_from_ybus(&ybus, nb, k)?;
            ys.push(y);
            ybars.push(ybar);
            ms.push(m);
        }

        let mut flows = Vec::new();
        for (l, br) in net.branches.iter().enumerate() {
            if br.smax <= T::zero() {
                continue;
            }
            let (from, to) = end_coeffs(net, br, l)?;
            let smax_sq = br.smax * br.smax;
            flows.push(FlowLimit { branch: l, end: BranchEnd::From, smax_sq, coeffs: from });
            if br.is_transformer() {
                flows.push(FlowLimit { branch: l, end: BranchEnd::To, smax_sq, coeffs: to });
            }
        }
        let mut us = Vec::with_capacity(flows.len());
        let mut vs = Vec::with_capacity(flows.len());
        for fl in &flows {
            let c = fl.coeffs;
            let (l, m) = (c.l, c.m);
            let entries = |k: [T; 3]| {
                [(l, l, k[0]), (l + nb, l + nb, k[0]), (l, m, k[1]), (l + nb, m + nb, k[1]), (l, m + nb, k[2]), (m, l + nb, -k[2])]
            };
            us.push(CoefMatrix::from_entries(n, entries(c.p))?);
            vs.push(CoefMatrix::from_entries(n, entries(c.q))?);
        }

        let layout = Layout { n_bus: nb, n_flow: flows.len() };
        let mut mats = ys;
        mats.extend(ybars);
        mats.extend(ms);
        mats.extend(us);
        mats.extend(vs);

        let inf = T::infinity();
        let mut lo = vec![-inf; layout.len()];
        let mut hi = vec![inf; layout.len()];
        let mut pd = Vec::with_capacity(nb);
        let mut qd = Vec::with_capacity(nb);
        let mut costs = Vec::with_capacity(nb);
        let mut gen_count = Vec::with_capacity(nb);
        let base = net.base_mva;
        for (k, bus) in net.buses.iter().enumerate() {
            pd.push(bus.pd);
            qd.push(bus.qd);
            let (mut pmin, mut pmax, mut qmin, mut qmax) = (T::zero(), T::zero(), T::zero(), T::zero());
            let (mut c2, mut c1, mut c0) = (T::zero(), T::zero(), T::zero());
            let mut count = 0usize;
            for g in net.gens_at(k) {
                pmin += g.pmin;
                pmax += g.pmax;
                qmin += g.qmin;
                qmax += g.qmax;
                c2 += g.c2;
                c1 += g.c1;
                c0 += g.c0;
                count += 1;
            }
            let t = layout.index(Family::T, k);
            let g = layout.index(Family::G, k);
            let h = layout.index(Family::H, k);
            lo[t] = pmin - bus.pd;
            hi[t] = pmax - bus.pd;
            lo[g] = qmin - bus.qd;
            hi[g] = qmax - bus.qd;
            lo[h] = bus.vmin * bus.vmin;
            hi[h] = bus.vmax * bus.vmax;
            gen_count.push(count);
            costs.push(if count == 0 {
                None
            } else {
                // Equal shares of the bus total: exact when the costs coincide.
                let nf = T::lit(count as f64);
                let (c2, c1) = (c2 / (nf * nf), c1 / nf);
                let s2 = c2 * base * base;
                Some(BusCost {
                    q2: s2,
                    q1: T::lit(2.0) * s2 * bus.pd + c1 * base,
                    q0: s2 * bus.pd * bus.pd + c1 * base * bus.pd + c0,
                })
            });
        }
        let z_hi = flows.iter().map(|f| f.smax_sq).collect();
        let rows = RowIndex::build(n, &mats);
        Ok(InstanceMatrices { layout, base_mva: base, mats, flows, pd, qd, lo, hi, z_hi, costs, gen_count, rows })
    }

    /// Dimension `n = 2|N|` of the lifted variable.
    pub fn n(&self) -> usize {
        2 * self.layout.n_bus
    }

    pub fn matrices(&self) -> &[CoefMatrix<T>] {
        &self.mats
    }

    pub fn matrix(&self, fam: Family, k: usize) -> &CoefMatrix<T> {
        &self.mats[self.layout.index(fam, k)]
    }

    pub fn rows(&self) -> &RowIndex<T> {
        &self.rows
    }

    /// `tr(A_c R Rᵀ)` for every constraint in layout order.
    pub fn traces(&self, r: &Factor<T>) -> Result<Vec<T>, QfError> {
        self.mats.iter().map(|a| a.trace_rrt(r)).collect()
    }

    /// Generation cost in $/h when bus injections are `t` (per unit).
    pub fn cost_of(&self, t: &[T]) -> T {
        self.costs.iter().zip(t).filter_map(|(c, &t)| c.map(|c| c.eval(t))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;

    const TWO: &str = "mpc.baseMVA = 100;
mpc.bus = [1 3 0 0 0 0 1 1 0 345 1 1.05 0.95; 2 1 350 -350 0 0 1 1 0 345 1 1.05 0.95];
mpc.gen = [1 0 0 400 -400 1 100 1 600 0];
mpc.branch = [1 2 0.04 0.2 0 990 990 990 0 0 1 -360 360];
mpc.gencost = [2 0 0 3 0 2 0];";

    #[test]
    fn boxes_follow_bus_types() {
        let net: Network<f64> = parse_case(TWO).unwrap();
        let inst = InstanceMatrices::build(&net).unwrap();
        let lay = inst.layout;
        assert_eq!(lay, Layout { n_bus: 2, n_flow: 1 });
        // load bus: both injection boxes collapse to minus the demand
        let t2 = lay.index(Family::T, 1);
        assert_eq!((inst.lo[t2], inst.hi[t2]), (-3.5, -3.5));
        let g2 = lay.index(Family::G, 1);
        assert_eq!((inst.lo[g2], inst.hi[g2]), (3.5, 3.5));
        let t1 = lay.index(Family::T, 0);
        assert_eq!((inst.lo[t1], inst.hi[t1]), (0.0, 6.0));
        let h = lay.index(Family::H, 0);
        assert!((inst.lo[h] - 0.9025).abs() < 1e-15 && (inst.hi[h] - 1.1025).abs() < 1e-15);
        assert!(inst.lo[lay.index(Family::U, 0)].is_infinite());
        assert!((inst.z_hi[0] - 9.9 * 9.9).abs() < 1e-12);
        // linear cost 2 $/MWh at 100 MVA base
        let c = inst.costs[0].unwrap();
        assert_eq!((c.q2, c.q1, c.q0), (0.0, 200.0, 0.0));
        assert!(inst.costs[1].is_none());
    }

    #[test]
    fn row_index_reproduces_matrices() {
        let net: Network<f64> = parse_case(TWO).unwrap();
        let inst = InstanceMatrices::build(&net).unwrap();
        for i in 0..inst.n() {
            for span in inst.rows().spans(i) {
                let a = &inst.matrices()[span.cons];
                assert_eq!(span.diag, a.get(i, i));
                for &(j, v) in inst.rows().neighbours(span) {
                    assert_eq!(v, a.get(i, j));
                }
            }
        }
    }

    #[test]
    fn layout_roundtrip() {
        let lay = Layout { n_bus: 3, n_flow: 2 };
        for idx in 0..lay.len() {
            let (f, k) = lay.family_of(idx);
            assert_eq!(lay.index(f, k), idx);
        }
    }
}
