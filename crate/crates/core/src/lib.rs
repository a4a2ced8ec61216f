//! Synthesis of smooth approximate-optimal feedback laws for infinite-horizon
//! control problems whose value functions may be Lipschitz but
//! non-differentiable.
//!
//! The crate provides:
//!
//! - grid-sampled scalar fields with interpolation and finite-difference
//!   calculus ([`grid`]);
//! - Moreau envelopes and mollification with regularity certificates
//!   ([`regularize`]);
//! - feedback laws derived from value-function surrogates and the four
//!   synthesis pipelines with their horizon schedules ([`law`], [`synthesis`]);
//! - closed-loop simulation with cost accumulation and escape detection
//!   ([`simulate`]);
//! - executable bound certificates: escape-time lower bounds, value-defect
//!   estimates in sup and L^p norms, and flow-volume checks ([`certify`]);
//! - a two-dimensional benchmark with a bump-perturbed quadratic cost whose
//!   value function is provably non-differentiable for strong bumps
//!   ([`example8`]), together with an open-loop transcription solver.

pub mod certify;
pub mod error;
pub mod estimate;
pub mod example8;
pub mod grid;
pub mod law;
pub mod problem;
pub mod region;
pub mod regularize;
pub mod scenario;
pub mod simulate;
pub mod synthesis;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{BoxGrid, InterpOrder, ScalarField};
pub use law::FeedbackLaw;
pub use problem::ControlProblem;
pub use region::{Region, RegionSample};
pub use trajectory::{TrajStatus, Trajectory};
