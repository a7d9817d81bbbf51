//! Multi-kernel column convolution, primary capsules, dropout strategies,
//! and routing-by-agreement into class capsules.

mod config;
mod dropout;
mod model;
pub mod params;
mod routing;

pub use crate::numerics::squash;
pub use config::{Channel, DropoutStrategy, KernelType, Mode, ModelConfig, WeightSharing};
pub use dropout::{apply_dropout, drop_count, dropout_masks, PrimaryCapsules};
pub use model::{class_probabilities, forward, forward_on_tape, Forward, ForwardNodes};
pub use params::ModelParams;
pub use routing::{dynamic_routing, route, transform_capsules, RoutingState};
