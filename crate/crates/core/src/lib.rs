//! Arbitrary-precision simulation of a particle crossing a stack of
//! Gaussian-slit planes, and period finding on the resulting detector pattern.

pub mod analysis;
pub mod error;
pub mod exotic;
pub mod intensity;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod propagator;
pub mod setup;

pub use error::{QpcError, Result};
pub use numerics::PrecisionPolicy;
pub use pipeline::Simulation;
pub use setup::{load_config, parse_config, Setup};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
