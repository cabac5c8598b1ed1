//! The residual U-Net. [`build_network`] draws deterministic initial
//! parameters for a [`NetworkConfig`], [`CruNet::unary_forward`] records the
//! network on a tape, and [`weights`] round-trips snapshots to disk.

mod config;
mod model;
mod params;
mod weights;

pub use config::NetworkConfig;
pub use model::{build_network, layer_manifest, unet_loss, CruNet};
pub use params::{ParamSet, RegisteredParams};
pub use weights::{load_weights, save_weights};
