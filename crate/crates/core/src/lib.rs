//! Fluid-optimal control of polling systems with large switchover times.
//!
//! The crate is split along the workflow it supports:
//!
//! * [`model`] holds the physical system (rates, table, switchover means) and
//!   the `(L, r)` control parameterisation shared by the fluid and stochastic
//!   models.
//! * [`fluid`] is the deterministic hybrid dynamical system under the
//!   stage-based proportion-reduction control: affine stage maps, the cycle
//!   map, its periodic equilibrium and exact event-driven trajectories.
//! * [`cost`] evaluates holding costs and integrates them exactly over
//!   piecewise-linear trajectories.
//! * [`rfcp`] minimises the periodic-equilibrium cost over the control
//!   proportions for a finite set of table multiplicities.
//! * [`des`] simulates the stochastic system under the binomial-exhaustive
//!   policy and estimates long-run costs and cycle statistics.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and
//! parallel replication live in the `fluidpoll` companion crate.

#![no_std]

extern crate alloc;

pub mod cost;
pub mod des;
pub mod fluid;
pub mod linalg;
pub mod model;
pub mod nelder_mead;
pub mod quadrature;
pub mod rfcp;
pub mod rng;

pub use cost::CostFunction;
pub use fluid::{PeCandidate, FluidTrajectory};
pub use model::{AugmentedTable, ControlParams, ModelError, SystemParameters};
pub use rfcp::{RfcpOptions, RfcpSolution};
