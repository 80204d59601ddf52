//! Power-system case files and the per-unit network model.
//!
//! Input is the MATPOWER text layout: `mpc.<name> = [ rows ];` blocks with
//! whitespace- or comma-separated columns and `%` comments. Loads, shunts,
//! generation limits and thermal ratings are divided by `baseMVA`; angles are
//! converted to radians. Cost coefficients stay in $/MW²h, $/MWh and $/h.

mod parse;
mod validate;

use std::collections::HashMap;

use serde::Serialize;

use crate::Scalar;

pub use parse::parse_case;
pub use validate::{validate, Diagnostic, Severity};

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `{0}` block")]
    MissingBlock(&'static str),
    #[error("{element} refers to unknown bus {bus}")]
    DanglingBus { element: String, bus: usize },
    #[error("generator {gen} has nonconvex cost (c2 = {c2})")]
    NonconvexCost { gen: usize, c2: f64 },
    #[error("generator {gen}: {reason}")]
    UnsupportedCost { gen: usize, reason: String },
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BusKind {
    Pq,
    Pv,
    Reference,
    Isolated,
}

impl BusKind {
    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 => Some(BusKind::Pq),
            2 => Some(BusKind::Pv),
            3 => Some(BusKind::Reference),
            4 => Some(BusKind::Isolated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus<T> {
    pub id: usize,
    pub kind: BusKind,
    pub pd: T,
    pub qd: T,
    pub gs: T,
    pub bs: T,
    pub vmin: T,
    pub vmax: T,
}

/// A generator with per-unit limits and a quadratic cost
/// `c2·P² + c1·P + c0` where `P` is in MW.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator<T> {
    pub bus: usize,
    pub pmin: T,
    pub pmax: T,
    pub qmin: T,
    pub qmax: T,
    pub c2: T,
    pub c1: T,
    pub c0: T,
}

/// Π-model branch. `smax == 0` means no thermal limit; `tap` is already
/// normalized (a file value of 0 becomes 1) and `shift` is in radians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch<T> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
    pub bc: T,
    pub smax: T,
    pub tap: T,
    pub shift: T,
}

impl<T: Scalar> Branch<T> {
    pub fn is_transformer(&self) -> bool {
        self.tap != T::one() || self.shift != T::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network<T> {
    pub base_mva: T,
    pub buses: Vec<Bus<T>>,
    pub gens: Vec<Generator<T>>,
    pub branches: Vec<Branch<T>>,
    #[serde(skip)]
    index: HashMap<usize, usize>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network and its bus-id index. No validation is performed.
    pub fn new(base_mva: T, buses: Vec<Bus<T>>, gens: Vec<Generator<T>>, branches: Vec<Branch<T>>) -> Self {
        let index = buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        Network { base_mva, buses, gens, branches, index }
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Dimension of the real lifted variable, `2|N|`.
    pub fn dim(&self) -> usize {
        2 * self.buses.len()
    }

    /// Position of the bus with the given external id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Generators attached to bus position `k`.
    pub fn gens_at(&self, k: usize) -> impl Iterator<Item = &Generator<T>> + '_ {
        let id = self.buses[k].id;
        self.gens.iter().filter(move |g| g.bus == id)
    }

    /// Position of the reference bus, falling back to the first bus.
    pub fn reference_bus(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Reference).unwrap_or(0)
    }

    /// Rebuilds the id index after the bus list was edited in place.
    pub fn reindex(&mut self) {
        self.index = self.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
    }
}
