//! Simulation and optimal control of a four-compartment (S/E/I/R) epidemic
//! reaction-diffusion system with heterogeneous, piecewise-constant diffusion.
//!
//! * [`grid`]: cell-centered finite volumes with no-flux boundaries.
//! * [`model`]: parameters, coefficient functions, initial data, controls.
//! * [`forward`]: conservative backward-Euler time stepping.
//! * [`sensitivity`]: linearized coefficients, tangent and discrete adjoint.
//! * [`control`]: cost, reduced gradient, projection, projected-gradient optimizer.
//! * [`scenario`]: JSON scenario description and validation.
//! * [`verify`]: numerical self-checks (gradient, duality, conservation, ...).

pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod scenario;
pub mod sensitivity;
pub mod verify;

pub use control::{optimize, CostConfig, OptimalityReport, OptimizerOptions};
pub use error::{Error, Result};
pub use forward::{mass_history, simulate, Diffusion, Problem, Trajectory};
pub use grid::{Domain, RegionBox, SubdomainPartition, TimeGrid};
pub use linalg::SolverOptions;
pub use scenario::{Scenario, ScenarioConfig};
pub use verify::{Check, CheckReport};
pub use model::{ControlBounds, ControlVector, InitialData, Parameters, Species, StateFields, TransmissionRate};
