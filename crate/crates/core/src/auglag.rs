//! Iterate state of the augmented Lagrangian, its value, residuals,
//! infeasibility measure, box projection and multiplier updates.
//!
//! Sign convention: every lifted equality contributes
//! `−λ·r + (ρ/2)·r²` with `r = aux − tr(A R Rᵀ)` (for `z`, `r = z − u² − v²`).
//! The state keeps the step size `mu`; the penalty weight is `ρ = 1/mu`, so a
//! smaller `mu` enforces feasibility harder.

use std::fmt::Write as _;

use crate::qf::{Factor, InstanceMatrices, QfError};
use crate::Scalar;

pub use crate::qf::{Family, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct AugLagState<T> {
    pub layout: Layout,
    pub r: Factor<T>,
    /// Auxiliary variables in `[t | g | h | u | v]` order.
    pub aux: Vec<T>,
    pub z: Vec<T>,
    /// Multipliers of the aux families, same layout as `aux`.
    pub lambda: Vec<T>,
    pub lambda_z: Vec<T>,
    /// Step size; the penalty weight is `1/mu`.
    pub mu: T,
    pub nu: T,
}

impl<T: Scalar> AugLagState<T> {
    /// Zero auxiliaries and multipliers around the given factor.
    pub fn new(inst: &InstanceMatrices<T>, r: Factor<T>, mu: T) -> Self {
        let lay = inst.layout;
        AugLagState {
            layout: lay,
            r,
            aux: vec![T::zero(); lay.len()],
            z: vec![T::zero(); lay.n_flow],
            lambda: vec![T::zero(); lay.len()],
            lambda_z: vec![T::zero(); lay.n_flow],
            mu,
            nu: T::zero(),
        }
    }

    #[inline]
    pub fn penalty(&self) -> T {
        self.mu.recip()
    }

    pub fn family(&self, fam: Family) -> &[T] {
        &self.aux[self.layout.range(fam)]
    }

    pub fn family_mut(&mut self, fam: Family) -> &mut [T] {
        let r = self.layout.range(fam);
        &mut self.aux[r]
    }

    pub fn multipliers(&self, fam: Family) -> &[T] {
        &self.lambda[self.layout.range(fam)]
    }

    pub fn t(&self) -> &[T] {
        self.family(Family::T)
    }

    pub fn g(&self) -> &[T] {
        self.family(Family::G)
    }

    pub fn h(&self) -> &[T] {
        self.family(Family::H)
    }

    pub fn u(&self) -> &[T] {
        self.family(Family::U)
    }

    pub fn v(&self) -> &[T] {
        self.family(Family::V)
    }

    fn check(&self, inst: &InstanceMatrices<T>) -> Result<(), QfError> {
        let lay = inst.layout;
        let dims = [
            (inst.n(), self.r.n()),
            (lay.len(), self.aux.len()),
            (lay.len(), self.lambda.len()),
            (lay.n_flow, self.z.len()),
            (lay.n_flow, self.lambda_z.len()),
        ];
        for (expected, got) in dims {
            if expected != got {
                return Err(QfError::Dimension { expected, got });
            }
        }
        Ok(())
    }

    /// Flat restart record: a header line `n r n_bus n_flow`, then one value
    /// per line in the order R (column-major), t, g, h, u, v, z, the
    /// multipliers in the same order, mu, nu.
    pub fn to_snapshot(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.r.n(), self.r.rank(), self.layout.n_bus, self.layout.n_flow);
        let values = self
            .r
            .as_slice()
            .iter()
            .chain(&self.aux)
            .chain(&self.z)
            .chain(&self.lambda)
            .chain(&self.lambda_z)
            .chain([&self.mu, &self.nu]);
        for v in values {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn from_snapshot(text: &str, inst: &InstanceMatrices<T>) -> Result<Self, SnapshotError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or(SnapshotError::Truncated)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| SnapshotError::Header))
            .collect::<Result<_, _>>()?;
        let [n, r, nb, nf] = header[..] else { return Err(SnapshotError::Header) };
        let lay = inst.layout;
        if n != inst.n() || nb != lay.n_bus || nf != lay.n_flow || r == 0 {
            return Err(SnapshotError::Mismatch { n, n_bus: nb, n_flow: nf });
        }
        let mut values = Vec::new();
        for l in lines {
            let v: f64 = l.parse().map_err(|_| SnapshotError::Value(l.to_string()))?;
            values.push(T::from_f64(v).ok_or_else(|| SnapshotError::Value(l.to_string()))?);
        }
        let want = n * r + 2 * (lay.len() + nf) + 2;
        if values.len() != want {
            return Err(SnapshotError::Count { expected: want, got: values.len() });
        }
        let mut it = values.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<T>>();
        let rdata = take(n * r);
        let aux = take(lay.len());
        let z = take(nf);
        let lambda = take(lay.len());
        let lambda_z = take(nf);
        let tail = take(2);
        Ok(AugLagState {
            layout: lay,
            r: Factor::from_col_major(n, r, rdata).map_err(|_| SnapshotError::Header)?,
            aux,
            z,
            lambda,
            lambda_z,
            mu: tail[0],
            nu: tail[1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot is empty")]
    Truncated,
    #[error("malformed snapshot header")]
    Header,
    #[error("snapshot is for n = {n}, {n_bus} buses, {n_flow} flow limits; the case differs")]
    Mismatch { n: usize, n_bus: usize, n_flow: usize },
    #[error("bad snapshot value `{0}`")]
    Value(String),
    #[error("snapshot holds {got} values, expected {expected}")]
    Count { expected: usize, got: usize },
}

/// Residuals at one state, together with the traces they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals<T> {
    pub layout: Layout,
    /// `tr(A_c R Rᵀ)` in layout order.
    pub traces: Vec<T>,
    /// `aux − trace` in layout order.
    pub aux: Vec<T>,
    /// `z − u² − v²`.
    pub z: Vec<T>,
}

impl<T: Scalar> Residuals<T> {
    pub fn compute(state: &AugLagState<T>, inst: &InstanceMatrices<T>) -> Result<Self, QfError> {
        state.check(inst)?;
        let traces = inst.traces(&state.r)?;
        Ok(Self::from_traces(state, traces))
    }

    pub fn from_traces(state: &AugLagState<T>, traces: Vec<T>) -> Self {
        let lay = state.layout;
        let aux = state.aux.iter().zip(&traces).map(|(a, t)| *a - *t).collect();
        let z = (0..lay.n_flow).map(|k| z_residual(state, k)).collect();
        Residuals { layout: lay, traces, aux, z }
    }

    pub fn family(&self, fam: Family) -> &[T] {
        &self.aux[self.layout.range(fam)]
    }

    pub fn rt(&self) -> &[T] {
        self.family(Family::T)
    }

    pub fn rg(&self) -> &[T] {
        self.family(Family::G)
    }

    pub fn rh(&self) -> &[T] {
        self.family(Family::H)
    }

    pub fn ru(&self) -> &[T] {
        self.family(Family::U)
    }

    pub fn rv(&self) -> &[T] {
        self.family(Family::V)
    }

    pub fn rz(&self) -> &[T] {
        &self.z
    }

    /// Sum of squared residuals over all six families.
    pub fn sum_sq(&self) -> T {
        self.aux.iter().chain(&self.z).map(|r| *r * *r).sum()
    }
}

#[inline]
fn z_residual<T: Scalar>(state: &AugLagState<T>, k: usize) -> T {
    let lay = state.layout;
    let u = state.aux[lay.index(Family::U, k)];
    let v = state.aux[lay.index(Family::V, k)];
    state.z[k] - u * u - v * v
}

/// `det(RᵀR)`, zero for a rank-deficient factor.
pub fn det_gram<T: Scalar>(r: &Factor<T>) -> T {
    let g = r.gram();
    let k = r.rank();
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| g[i][j].to_f64_lossy());
    T::lit(m.determinant())
}

/// Augmented Lagrangian at `state`. The generation cost is charged on the
/// injection variables `t`; the determinant term enters only when `nu > 0`.
pub fn eval_lagrangian<T: Scalar>(state: &AugLagState<T>, inst: &InstanceMatrices<T>) -> Result<T, QfError> {
    state.check(inst)?;
    let traces = inst.traces(&state.r)?;
    Ok(eval_with_traces(state, inst, &traces))
}

pub(crate) fn eval_with_traces<T: Scalar>(state: &AugLagState<T>, inst: &InstanceMatrices<T>, traces: &[T]) -> T {
    let rho = state.penalty();
    let half = T::lit(0.5);
    let mut l = inst.cost_of(state.t());
    for ((a, t), lam) in state.aux.iter().zip(traces).zip(&state.lambda) {
        let r = *a - *t;
        l += -*lam * r + half * rho * r * r;
    }
    for k in 0..state.layout.n_flow {
        let r = z_residual(state, k);
        l += -state.lambda_z[k] * r + half * rho * r * r;
    }
    if state.nu > T::zero() {
        l += state.nu * det_gram(&state.r);
    }
    l
}

/// Infeasibility `T`: the sum of squared residuals of every lifted equality.
pub fn infeasibility_t<T: Scalar>(state: &AugLagState<T>, inst: &InstanceMatrices<T>) -> Result<T, QfError> {
    Ok(Residuals::compute(state, inst)?.sum_sq())
}

/// Clamps `t, g, h` and `z` into their boxes; `u, v` are free.
pub fn project_boxes<T: Scalar>(state: &mut AugLagState<T>, inst: &InstanceMatrices<T>) {
    for ((a, lo), hi) in state.aux.iter_mut().zip(&inst.lo).zip(&inst.hi) {
        *a = a.max(*lo).min(*hi);
    }
    for (z, hi) in state.z.iter_mut().zip(&inst.z_hi) {
        *z = z.max(T::zero()).min(*hi);
    }
}

/// First-order ascent `λ ← λ − ρ·r` on every family.
pub fn update_multipliers<T: Scalar>(state: &mut AugLagState<T>, res: &Residuals<T>) {
    let rho = state.penalty();
    for (l, r) in state.lambda.iter_mut().zip(&res.aux) {
        *l -= rho * *r;
    }
    for (l, r) in state.lambda_z.iter_mut().zip(&res.z) {
        *l -= rho * *r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;
    use crate::qf::{univariate_restriction, Coord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CASE9: &str = include_str!("../../../data/cases/case9.m");

    fn inst9() -> InstanceMatrices<f64> {
        InstanceMatrices::build(&parse_case(CASE9).unwrap()).unwrap()
    }

    fn random_state(inst: &InstanceMatrices<f64>, seed: u64) -> AugLagState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = inst.n();
        let data = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = AugLagState::new(inst, Factor::from_col_major(n, 2, data).unwrap(), rng.gen_range(0.05..2.0));
        for a in s.aux.iter_mut().chain(s.z.iter_mut()) {
            *a = rng.gen_range(-2.0..2.0);
        }
        for l in s.lambda.iter_mut().chain(s.lambda_z.iter_mut()) {
            *l = rng.gen_range(-3.0..3.0);
        }
        s
    }

    /// Consistent state: every auxiliary equals its trace and `z = u² + v²`.
    fn consistent(inst: &InstanceMatrices<f64>, seed: u64) -> AugLagState<f64> {
        let mut s = random_state(inst, seed);
        s.aux = inst.traces(&s.r).unwrap();
        for k in 0..s.layout.n_flow {
            s.z[k] = s.u()[k].powi(2) + s.v()[k].powi(2);
        }
        s
    }

    /// Straightforward re-implementation with dense matrices.
    fn dense_lagrangian(s: &AugLagState<f64>, inst: &InstanceMatrices<f64>) -> f64 {
        let n = inst.n();
        let mut w = vec![vec![0.0; n]; n];
        for c in 0..s.r.rank() {
            for i in 0..n {
                for j in 0..n {
                    w[i][j] += s.r.get(i, c) * s.r.get(j, c);
                }
            }
        }
        let rho = 1.0 / s.mu;
        let mut l = 0.0;
        for (k, cost) in inst.costs.iter().enumerate() {
            if let Some(c) = cost {
                let t = s.t()[k];
                l += c.q2 * t * t + c.q1 * t + c.q0;
            }
        }
        for (idx, a) in inst.matrices().iter().enumerate() {
            let d = a.to_dense();
            let tr: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| d[i][j] * w[j][i]).sum();
            let r = s.aux[idx] - tr;
            l += -s.lambda[idx] * r + 0.5 * rho * r * r;
        }
        for k in 0..s.layout.n_flow {
            let r = s.z[k] - s.u()[k].powi(2) - s.v()[k].powi(2);
            l += -s.lambda_z[k] * r + 0.5 * rho * r * r;
        }
        l
    }

    #[test]
    fn consistent_state_has_pure_cost() {
        let inst = inst9();
        let mut s = consistent(&inst, 1);
        s.lambda.iter_mut().for_each(|l| *l = 0.0);
        s.lambda_z.iter_mut().for_each(|l| *l = 0.0);
        let l = eval_lagrangian(&s, &inst).unwrap();
        assert!((l - inst.cost_of(s.t())).abs() < 1e-9 * l.abs());
        assert!(infeasibility_t(&s, &inst).unwrap() < 1e-24);
    }

    #[test]
    fn constant_cost_on_empty_network() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1.1 0.9];\nmpc.gen = [1 0 0 1 -1 1 100 1 1 0];\nmpc.branch = [];\nmpc.gencost = [2 0 0 3 0 0 7];";
        let inst = InstanceMatrices::build(&parse_case::<f64>(text).unwrap()).unwrap();
        let s = AugLagState::new(&inst, Factor::zeros(2, 1), 1.0);
        assert_eq!(eval_lagrangian(&s, &inst).unwrap(), 7.0);
    }

    #[test]
    fn matches_dense_oracle() {
        let inst = inst9();
        for seed in 0..5 {
            let s = random_state(&inst, seed);
            let fast = eval_lagrangian(&s, &inst).unwrap();
            let slow = dense_lagrangian(&s, &inst);
            assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn single_violation_infeasibility() {
        let inst = inst9();
        let mut s = consistent(&inst, 2);
        s.aux[0] += 0.1;
        assert!((infeasibility_t(&s, &inst).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn infeasibility_is_sum_of_residual_squares() {
        let inst = inst9();
        let s = random_state(&inst, 3);
        let res = Residuals::compute(&s, &inst).unwrap();
        let direct: f64 = [res.rt(), res.rg(), res.rh(), res.ru(), res.rv(), res.rz()]
            .iter()
            .flat_map(|f| f.iter())
            .map(|r| r * r)
            .sum();
        assert!((infeasibility_t(&s, &inst).unwrap() - direct).abs() <= 1e-14 * direct);
    }

    #[test]
    fn projection_examples() {
        let inst = inst9();
        let mut s = consistent(&inst, 4);
        let gen_bus = 0;
        let t = s.layout.index(Family::T, gen_bus);
        s.aux[t] = 10.0;
        s.z[0] = -0.5;
        let u0 = s.u().to_vec();
        project_boxes(&mut s, &inst);
        assert_eq!(s.aux[t], inst.hi[t]);
        assert_eq!(s.z[0], 0.0);
        assert_eq!(s.u(), &u0[..]);
        let once = s.clone();
        project_boxes(&mut s, &inst);
        assert_eq!(s, once);
    }

    #[test]
    fn multiplier_rule() {
        let inst = inst9();
        let mut s = consistent(&inst, 5);
        s.lambda.iter_mut().for_each(|l| *l = 0.0);
        // penalty weight 0.1
        s.mu = 10.0;
        let before = s.lambda.clone();
        let res = Residuals::compute(&s, &inst).unwrap();
        update_multipliers(&mut s, &res);
        assert!(s.lambda.iter().zip(&before).all(|(a, b)| (a - b).abs() < 1e-12));

        s.aux[0] += 0.5;
        let res = Residuals::compute(&s, &inst).unwrap();
        update_multipliers(&mut s, &res);
        assert!((s.lambda[0] + 0.05).abs() < 1e-12);
        for _ in 0..3 {
            update_multipliers(&mut s, &res);
        }
        assert!((s.lambda[0] + 4.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn snapshot_roundtrip() {
        let inst = inst9();
        let s = random_state(&inst, 6);
        let text = s.to_snapshot();
        assert!(text.starts_with("18 2 9 9\n"));
        let back = AugLagState::from_snapshot(&text, &inst).unwrap();
        assert_eq!(back, s);
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(AugLagState::from_snapshot(&truncated, &inst), Err(SnapshotError::Count { .. })));
    }

    #[test]
    fn det_of_orthogonal_columns() {
        let r = Factor::<f64>::from_col_major(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        assert!((det_gram(&r) - 36.0).abs() < 1e-12);
        let r = Factor::<f64>::from_col_major(2, 2, vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!(det_gram(&r).abs() < 1e-12);
    }

    fn coords(inst: &InstanceMatrices<f64>) -> Vec<Coord> {
        let mut all: Vec<Coord> = (0..inst.n()).flat_map(|row| (0..2).map(move |col| Coord::R { row, col })).collect();
        for fam in Family::ALL {
            all.extend((0..inst.layout.range(fam).len()).map(|k| Coord::Aux(fam, k)));
        }
        all.extend((0..inst.layout.n_flow).map(Coord::Z));
        all
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_matches_central_differences(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
            let inst = inst9();
            let s = random_state(&inst, seed);
            let all = coords(&inst);
            let coord = all[pick.index(all.len())];
            let traces = inst.traces(&s.r).unwrap();
            let q = univariate_restriction(&inst, &s, &traces, coord).unwrap();
            let x0 = match coord {
                Coord::R { row, col } => s.r.get(row, col),
                Coord::Aux(f, k) => s.aux[s.layout.index(f, k)],
                Coord::Z(k) => s.z[k],
            };
            let h = 1e-5;
            let at = |x: f64| {
                let mut t = s.clone();
                match coord {
                    Coord::R { row, col } => t.r.set(row, col, x),
                    Coord::Aux(f, k) => { let i = t.layout.index(f, k); t.aux[i] = x }
                    Coord::Z(k) => t.z[k] = x,
                }
                eval_lagrangian(&t, &inst).unwrap()
            };
            let fd = (at(x0 + h) - at(x0 - h)) / (2.0 * h);
            let an = q.derivative(x0);
            let scale = an.abs().max(fd.abs()).max(1.0);
            prop_assert!((fd - an).abs() <= 1e-6 * scale, "{coord:?}: fd {fd} vs analytic {an}");
        }

        #[test]
        fn infeasibility_nonnegative(seed in any::<u64>()) {
            let inst = inst9();
            let s = random_state(&inst, seed);
            prop_assert!(infeasibility_t(&s, &inst).unwrap() > 0.0);
            let c = consistent(&inst, seed);
            prop_assert!(infeasibility_t(&c, &inst).unwrap() <= 1e-14);
        }

        #[test]
        fn constant_cost_shifts_lagrangian(seed in any::<u64>(), c0 in -100.0f64..100.0) {
            let mut inst = inst9();
            let s = random_state(&inst, seed);
            let base = eval_lagrangian(&s, &inst).unwrap();
            inst.costs[0].as_mut().unwrap().q0 += c0;
            let shifted = eval_lagrangian(&s, &inst).unwrap();
            prop_assert!((shifted - base - c0).abs() <= 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn penalty_terms_bound_below(seed in any::<u64>()) {
            let inst = inst9();
            let mut s = random_state(&inst, seed);
            s.lambda.iter_mut().chain(s.lambda_z.iter_mut()).for_each(|l| *l = 0.0);
            project_boxes(&mut s, &inst);
            let lower: f64 = inst.costs.iter().enumerate().filter_map(|(k, c)| c.map(|c| {
                let i = s.layout.index(Family::T, k);
                let (lo, hi) = (inst.lo[i], inst.hi[i]);
                let v = if c.q2 > 0.0 { (-c.q1 / (2.0 * c.q2)).clamp(lo, hi) } else if c.q1 >= 0.0 { lo } else { hi };
                c.eval(v)
            })).sum();
            prop_assert!(eval_lagrangian(&s, &inst).unwrap() >= lower - 1e-9 * lower.abs());
        }
    }
}
