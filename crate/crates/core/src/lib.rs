//! Many-server load balancing with two-phase Coxian service and finite
//! buffers: the aggregate Markov model, routing policies, an exact stationary
//! solver, a simulator, and numerical checks of the steady-state bounds.

pub mod error;
pub mod exact;
pub mod harness;
pub mod model;
pub mod policy;
pub mod sim;
pub mod stein;

pub use error::{Error, Result};
pub use exact::{ExactMetrics, ExactSolution, StateSpace, StationaryDistribution};
pub use model::{AggregateState, CoxianParams, EventKind, HeavyTraffic, Phase, SystemConfig};
pub use policy::{PodSampling, PolicyKind, RoutingDistribution};
pub use stein::DerivedConstants;
