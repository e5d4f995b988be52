//! Reconstruction of the power-flow manifold of an AC network from local
//! measurements around one operating point.
//!
//! The pipeline estimates the first-order Jacobian from measurement increments,
//! rebuilds every higher derivative from it through per-branch flow terms,
//! expands geodesics of the pullback metric as Taylor jets and continues them
//! with Padé approximants to evaluate voltages and locate the singular boundary.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod network;
pub mod pade;
pub mod powerflow;
pub mod terms;

pub use error::{Error, Result};
pub use network::{build_admittance, AdmittanceMatrices, BusType, Layout, NetworkCase};
pub use powerflow::{OperatingPoint, PowerFlowModel};
