//! Sparse real coefficient matrices of the lifted problem and their
//! quadratic forms.
//!
//! With `x = (Re V, Im V) ∈ ℝ^{2|N|}`, every physical quantity of the
//! network is a quadratic form `xᵀ A x`: active and reactive injections,
//! squared voltage magnitudes and branch flows. The lifted problem replaces
//! `x xᵀ` by `W = R Rᵀ`, so each constraint reads `tr(A R Rᵀ)`.

mod admittance;
mod coef;
mod instance;
pub(crate) mod restriction;

pub use admittance::{
    branch_admittance, build_branch_matrices, build_bus_matrices, magnitude_matrix, BranchAdmittance, BranchMatrices,
    EndCoeffs, FlowMatrices, Ybus,
};
pub use coef::{CoefMatrix, CountingOps, Factor, NoCount, OpCounter};
pub use instance::{BranchEnd, BusCost, Family, FlowLimit, InstanceMatrices, Layout, RowIndex, RowSpan};
pub use restriction::{univariate_restriction, Coord};

pub use crate::polyroot::QuarticCoeffs;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("branch {branch} has zero series impedance")]
    SingularBranch { branch: usize },
    #[error("unknown bus id {0}")]
    UnknownBus(usize),
    #[error("{what} index {index} out of range (len {len})")]
    Index { what: &'static str, index: usize, len: usize },
}
