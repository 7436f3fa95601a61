//! Pinch-pottery pipeline: a kinematic clay simulator, scripted demonstrations,
//! point-cloud encoders, a goal-conditioned diffusion policy with collision
//! projection, and the evaluation metrics used to score rollouts.

pub mod claysim;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod policy;
pub mod safety;

pub use claysim::{ClayState, GoalSpec, PinchAction, SimConfig};
pub use dataio::{Step, Trajectory};
pub use error::{Error, Result};
pub use geometry::{PointCloud, RigidTransform};
pub use metrics::MetricReport;
pub use safety::SafetyCircle;
