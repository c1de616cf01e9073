//! Nucleation, polymerization, depolymerization and fragmentation kinetics
//! of polymers in a closed system.
//!
//! The unknowns are the monomer concentration `V(t)` and the size density
//! `u(t, x)` of polymers, coupled through conservation of total mass
//! `V + ∫ x u dx = M`. The crate provides
//!
//! - [`rates`]: parametric rate profiles and hypothesis checks,
//! - [`state`]: the size grid, system state and moments,
//! - [`fragmentation`]: the mass-conserving discrete fragmentation operator,
//! - [`kinetics`]: the Eulerian finite-volume time integrator,
//! - [`characteristics`]: an exact Lagrangian solver for pure transport,
//! - [`diagnostics`]: entropies, Wasserstein distances and rate estimators,
//! - [`steady`]: construction of positive steady states via a Perron
//!   eigenproblem in the monomer level.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod diagnostics;
pub mod error;
pub mod fragmentation;
pub mod kinetics;
pub mod rates;
pub mod state;
pub mod steady;

pub use error::{Error, Result};
pub use rates::{DepolyProfile, FragProfile, FragRate, Kernel, NucleationSpec, RateModel, Regime};
pub use state::{SizeGrid, SystemState};
