//! Local and profile-based D-optimal experimental design for nonlinear
//! regression models.
//!
//! The pipeline: fit a model by least squares ([`nls`]), compute local and
//! profile-based sensitivities ([`sensitivity`]), score designs with the D
//! and D_P criteria ([`criteria`]), search a design region for initial or
//! sequential designs ([`search`]) and compare designs by simulation
//! ([`simulation`]). [`zoo`] ships the Michaelis-Menten and Hougen-Watson
//! models with their reference data.

pub mod cli;
pub mod criteria;
pub mod error;
pub mod finite_diff;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nls;
pub mod region;
pub mod search;
pub mod sensitivity;
pub mod simulation;
pub mod zoo;

pub use criteria::{CriterionKind, CriterionValue, EfficiencyMode, EfficiencyReport};
pub use error::{Error, Result};
pub use model::{Dataset, DerivativeSource, ModelSpec, NoiseModel, ParamPartition, SecondDerivatives};
pub use nls::{ConditionalFit, FitResult};
pub use region::DesignRegion;
pub use search::{DesignOptions, DesignOutcome};
pub use sensitivity::{ResidualMode, SensitivityBundle};
pub use simulation::{SimulationPlan, SimulationReport};
pub use zoo::ZooEntry;
