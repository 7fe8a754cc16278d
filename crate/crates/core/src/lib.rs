//! Closed-loop digital twin of a semi-autogenous grinding (SAG) mill.
//!
//! The twin chains three emulators in series: a fuzzy expert controller that
//! proposes manipulated-variable setpoints, a linear state-space model of the
//! regulatory loops that track those setpoints, and a NARX network that maps
//! the manipulated variables onto bearing pressure and motor power. Around the
//! twin sit the data conditioning pipeline, the identification/training
//! routines, a residual-based drift detector that decides when the process
//! model must be retrained, and a synthetic plant used for evaluation.

pub mod drift;
pub mod error;
pub mod expert;
pub mod io;
pub mod narx;
pub mod optim;
pub mod pipeline;
pub mod regulatory;
pub mod scaling;
pub mod scenario;
pub mod stats;
pub mod twin;

pub use error::{Error, Result};
pub use pipeline::{PlantRecord, RecordFlags, SampledSeries, ValidityCriteria};

/// Number of manipulated variables: tonnage, solids percentage, mill speed.
pub const N_MV: usize = 3;
/// Number of controlled variables: bearing pressure, motor power.
pub const N_CV: usize = 2;
