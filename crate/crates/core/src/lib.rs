//! Analysis and simulation of multi-access server systems that mix
//! job-type-specific (systematic) servers with MDS erasure-coded servers.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] describes the topology, the class-level recovery patterns a
//!   job can be served by, and exact rank checks on the code's generator.
//! * [`capacity`] decides membership in the uncoded and coded service
//!   capacity regions, both in closed form and through a linear program
//!   solved by the in-crate [`simplex`] solver.
//! * [`regimes`] computes slack capacities and labels an arrival vector with
//!   its traffic regime.
//! * [`routing`] builds probabilistic routing policies, evaluates the loads
//!   they induce and optimises the independence-approximated response time.
//! * [`simulator`] is an exact discrete-event fork-join simulator.

pub mod capacity;
pub mod error;
pub mod model;
pub mod regimes;
pub mod routing;
pub mod simplex;
pub mod simulator;

pub use capacity::{Membership, Verdict};
pub use error::{Error, Result};
pub use model::{GeneratorSpec, RecoveryPattern, SystemSpec};
pub use regimes::{RegimeKind, RegimeLabel, Thresholds};
pub use routing::{LoadProfile, RoutingPolicy};
pub use simulator::{ArrivalSchedule, RunConfig, SimStats, SquareWave};

/// Tolerance used for every membership and stability verdict (rate units).
pub const EPS: f64 = 1e-9;
