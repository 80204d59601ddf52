use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::Network;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Self {
        Diagnostic { severity: Severity::Error, message }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Checks every structural and limit invariant of the network; one
/// diagnostic per violation, empty when the network is usable.
pub fn validate<T: Scalar>(net: &Network<T>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let zero = T::zero();

    if !(net.base_mva > zero) {
        out.push(Diagnostic::error(format!("baseMVA must be positive, got {}", net.base_mva)));
    }
    let mut seen = HashSet::new();
    for bus in &net.buses {
        if !seen.insert(bus.id) {
            out.push(Diagnostic::error(format!("bus {} is defined twice", bus.id)));
        }
        if bus.vmin < zero {
            out.push(Diagnostic::error(format!("bus {}: Vmin = {} is negative", bus.id, bus.vmin)));
        }
        if bus.vmin > bus.vmax {
            out.push(Diagnostic::error(format!("bus {}: Vmin = {} exceeds Vmax = {}", bus.id, bus.vmin, bus.vmax)));
        }
    }
    for (g, gen) in net.gens.iter().enumerate() {
        let g = g + 1;
        if net.bus_index(gen.bus).is_none() {
            out.push(Diagnostic::error(format!("generator {g}: unresolved bus {}", gen.bus)));
        }
        if gen.pmin > gen.pmax {
            out.push(Diagnostic::error(format!("generator {g}: Pmin = {} exceeds Pmax = {}", gen.pmin, gen.pmax)));
        }
        if gen.qmin > gen.qmax {
            out.push(Diagnostic::error(format!("generator {g}: Qmin = {} exceeds Qmax = {}", gen.qmin, gen.qmax)));
        }
        if gen.c2 < zero {
            out.push(Diagnostic::error(format!("generator {g}: nonconvex cost c2 = {}", gen.c2)));
        }
    }
    for (l, br) in net.branches.iter().enumerate() {
        let l = l + 1;
        for id in [br.from, br.to] {
            if net.bus_index(id).is_none() {
                out.push(Diagnostic::error(format!("branch {l}: unresolved bus {id}")));
            }
        }
        if br.r * br.r + br.x * br.x <= zero {
            out.push(Diagnostic::error(format!("branch {l}: zero series impedance (r = x = 0)")));
        }
        if !(br.tap > zero) {
            out.push(Diagnostic::error(format!("branch {l}: tap ratio {} is not positive", br.tap)));
        }
        if br.smax < zero {
            out.push(Diagnostic::error(format!("branch {l}: negative rating {}", br.smax)));
        }
    }
    if net.gens.is_empty() && !net.buses.is_empty() {
        out.push(Diagnostic { severity: Severity::Warning, message: "network has no generators".into() });
    }
    out
}
