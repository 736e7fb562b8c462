//! The node daemon: a controller endpoint that starts and stops workloads,
//! a service endpoint with state, presence, sensors and actuators, and the
//! background tasks that drive them.
//!
//! Energy and workload execution sit behind adapters so the same daemon runs
//! with a virtual battery and in-process workers on a laptop, or with a
//! battery probe and a container engine on a device.

pub mod api;
pub mod client;
pub mod config;
pub mod daemon;
pub mod energy;
pub mod runtime;
mod server;

use thiserror::Error;

pub use api::ApiError;
pub use client::{ClientError, NodeClient};
pub use config::NodeConfig;
pub use daemon::{Delivery, NodeDaemon};
pub use energy::{EnergySource, FileProbe, VirtualBattery};
pub use runtime::{InprocRuntime, SubprocessRuntime, WorkloadRuntime};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
