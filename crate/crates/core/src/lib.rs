//! Low-rank coordinate descent for AC optimal power flow.
//!
//! The crate reads MATPOWER-style case files, lifts the rectangular
//! power-voltage formulation into box constraints on auxiliary variables
//! tied to traces `tr(A W)` with `W = R Rᵀ`, and minimizes the augmented
//! Lagrangian of that lifted problem one scalar at a time. Every scalar
//! restriction is a polynomial of degree at most four, so each step is an
//! exact minimization computed from the real roots of a cubic.
//!
//! Module map:
//!
//! - [`case_io`]: case-file parsing and validation into a per-unit [`Network`].
//! - [`qf`]: sparse symmetric coefficient matrices, admittance assembly and
//!   univariate restrictions of the Lagrangian.
//! - [`polyroot`]: closed-form cubic roots and exact quartic / boxed quadratic minimizers.
//! - [`auglag`]: iterate state, Lagrangian value, residuals and multiplier updates.
//! - [`engine`]: the outer rank loop and the inner coordinate-descent sweeps.
//! - [`certify`]: rank tests, voltage extraction, power-flow residuals and the
//!   dual certificate.
//!
//! Everything numeric is generic over [`Scalar`]; the `*64` / `*32` aliases
//! below fix the common choices.

pub mod auglag;
pub mod case_io;
pub mod certify;
pub mod engine;
pub mod polyroot;
pub mod qf;
mod scalar;

pub use auglag::{AugLagState, Family, Residuals};
pub use case_io::{parse_case, validate, Branch, Bus, BusKind, CaseError, Diagnostic, Generator, Network, Severity};
pub use certify::{Certificate, Verdict};
pub use engine::{solve, MuSchedule, Parallelism, SolveConfig, SolveError, SolveReport, Status};
pub use polyroot::{PolyError, QuarticCoeffs};
pub use qf::{CoefMatrix, Factor, InstanceMatrices, QfError};
pub use scalar::Scalar;

pub type Network64 = Network<f64>;
pub type Network32 = Network<f32>;
pub type CoefMatrix64 = CoefMatrix<f64>;
pub type Factor64 = Factor<f64>;
pub type InstanceMatrices64 = InstanceMatrices<f64>;
pub type AugLagState64 = AugLagState<f64>;
pub type SolveConfig64 = SolveConfig<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type SolveConfig32 = SolveConfig<f32>;
pub type SolveReport32 = SolveReport<f32>;
