//! Differential equation method for random processes: ODE constants and
//! solutions, concentration bounds, process simulation and Monte Carlo
//! verification of the deviation bound.

pub mod bounds;
pub mod domain;
pub mod error;
pub mod model;
pub mod numfmt;
pub mod ode;
pub mod process;
pub mod sim;
pub mod spec;
pub mod verify;

pub use domain::Domain;
pub use error::{Error, Result};
pub use model::DriftModel;
pub use ode::{compute_rt, solve_ode, Admissibility, Constants, OdeSolution};
pub use process::{AnyProcess, Process};
pub use sim::{run_ensemble, simulate, Ensemble, SimOptions, Trajectory};
pub use spec::{EventPredicate, ProcessSpec, Truncation};
pub use verify::{verify, Report, VerifyMode, VerifyOptions};
