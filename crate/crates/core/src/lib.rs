//! Coalescing tagged particle model.
//!
//! A tagged sphere moves at constant velocity through a static Poisson field
//! of spherical obstacles and absorbs every obstacle it touches. The crate
//! provides the event-driven particle simulation ([`sim`]), a Monte Carlo
//! sampler of the limiting jump process ([`kinetic`]), deterministic solvers
//! for the volume marginal ([`marginal`]) and the checks built on top of them
//! ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod field;
pub mod geom;
pub mod kinetic;
pub mod marginal;
pub mod measure;
pub mod num;
pub mod ode;
pub mod output;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod volume_dist;

/// Scalar used by the simulators.
pub type Scalar = f64;
/// Position vector used by the simulators.
pub type Vec3 = geom::Vector3<Scalar>;

pub use error::{CtpError, Result};
pub use field::{Obstacle, ObstacleId, ObstacleSource, PoissonField, ScriptedField};
pub use measure::{EmpiricalMeasure, Estimate, MeasureDim};
pub use sim::{EventLog, SimParams, TaggedState};
pub use volume_dist::VolumeDistribution;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
