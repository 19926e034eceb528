//! The single-stage dilated network, its multi-stage recurrent extension,
//! training losses, checkpoints and receptive-field analysis.

mod checkpoint;
mod config;
mod loss;
mod net;
mod receptive;

pub use checkpoint::{config_path, decode, encode, StoredTensor, MAGIC, VERSION};
pub use config::{Framework, RescanConfig, ScanConfig, DEFAULT_STAGES, MAX_STAGES};
pub use loss::{framework_loss, loss_additive, loss_full};
pub use net::{BodyLayer, DerainNet, DerainResult};
pub use receptive::{empirical_footprint, receptive_field, Footprint};

#[cfg(test)]
mod tests;
