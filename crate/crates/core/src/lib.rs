//! Uncertainty-aware observations from multi-pass object detections, and
//! their evaluation under open-set conditions.
//!
//! Detections from repeated stochastic forward passes are grouped by IoU
//! ([`partition`]), fused into a label distribution with entropy and a mean box
//! with covariance ([`fusion`]), and scored against ground truth containing
//! objects of unknown classes ([`evaluation`]). [`simulator`] provides a seeded
//! synthetic detector to drive the pipeline without a network.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod partition;
pub mod pipeline;
pub mod registry;
pub mod simulator;

pub use error::{Error, Result};
pub use evaluation::{CurvePoint, EvalConfig, EvalCounts, GroundTruthObject, ScoredScene};
pub use fusion::Observation;
pub use geometry::BoundingBox;
pub use partition::{Detection, ObservationGroup};
pub use pipeline::Pipeline;
pub use simulator::{SimulatedScene, SimulatorConfig};
