//! Bandwidth-sharing networks under priority scaling.
//!
//! A network is a set of flow classes sharing capacity through an
//! allocation function. Surging classes have their allocation weight
//! divided by a scaling parameter `K`; as `K` grows their scaled flow counts
//! follow an ODE driven by the stationary behaviour of the remaining
//! (stable) classes with the surge held fixed.
//!
//! - [`model`]: classes, traffic profiles, validation.
//! - [`alloc`]: allocation functions.
//! - [`ctmc`]: exact simulation of the flow-count process.
//! - [`stationary`]: frozen-surge stationary laws and averaged rates.
//! - [`fluid`]: the averaged ODE, equilibria, stability.
//! - [`qos`]: Erlang-B dimensioning of streaming traffic.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod ctmc;
pub mod fluid;
pub mod model;
pub mod qos;
pub mod stationary;

pub use alloc::{AllocError, AllocationSpec, ElasticShare};
pub use ctmc::{ScaledTrajectory, SimConfig};
pub use fluid::{EquilibriumReport, FluidSolution, Regime};
pub use model::{CumulativeArrivals, NetworkModel, State, TrafficClass, TrafficProfile, Violation};
pub use stationary::StationaryDistribution;

/// Surge mass used in place of an exact zero when evaluating limits at the
/// boundary: the averaged rates at `z = 0` are the right limits `z -> 0+`.
pub const SURGE_FLOOR: f64 = 1e-13;
