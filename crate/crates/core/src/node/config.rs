use std::collections::{BTreeMap, HashSet};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::api::Bandwidth;
use super::NodeError;
use crate::discovery::{AddressSpace, DiscoveryConfig};
use crate::policy::PolicyParams;
use crate::sim::CpuModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyAdapterConfig {
    /// Battery simulated with the timeslot energy model.
    Virtual {
        capacity: f64,
        initial_charge: f64,
        #[serde(default)]
        phi: f64,
        #[serde(default)]
        varphi: f64,
        #[serde(default)]
        solar: Vec<f64>,
        /// Wall-clock length of one energy slot; no draw at all when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot_ms: Option<u64>,
    },
    /// Percentage read from a file.
    Probe { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuntimeAdapterConfig {
    /// Workloads run as tasks inside the daemon.
    Inproc,
    /// Each workload is a child process running `edgemesh workload`.
    Subprocess {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        program: Option<PathBuf>,
    },
    /// Each workload is a container started through an engine CLI.
    Engine {
        #[serde(default = "default_engine")]
        command: String,
        #[serde(default)]
        extra_args: Vec<String>,
    },
}

fn default_engine() -> String {
    "docker".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub energy: EnergyAdapterConfig,
    pub runtime: RuntimeAdapterConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub id: String,
    pub period_ms: u64,
    #[serde(default)]
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorConfig {
    pub id: String,
}

/// How long a workload image takes to process one input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub service_time_ms: u64,
}

/// The workload this node initiates and manages with its policy loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnedWorkload {
    pub image_ref: String,
    pub sensor_id: String,
    pub actuator_id: String,
}

/// Where to look for peers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeerSpace {
    /// Every host of the subnet, at one service port.
    Subnet {
        interface: Ipv4Addr,
        netmask: Ipv4Addr,
        service_port: u16,
    },
    /// A fixed list of service endpoints.
    Endpoints { endpoints: Vec<SocketAddr> },
}

impl Default for PeerSpace {
    fn default() -> Self {
        PeerSpace::Endpoints { endpoints: Vec::new() }
    }
}

fn default_max_workloads() -> usize {
    2
}

fn default_request_timeout_ms() -> u64 {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub controller_bind: SocketAddr,
    pub service_bind: SocketAddr,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub peers: PeerSpace,
    pub adapters: AdapterConfig,
    #[serde(default)]
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub actuators: Vec<ActuatorConfig>,
    #[serde(default)]
    pub workloads: BTreeMap<String, WorkloadProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owned_workload: Option<OwnedWorkload>,
    #[serde(default = "default_max_workloads")]
    pub max_workloads: usize,
    #[serde(default)]
    pub cpu: CpuModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<Bandwidth>,
    /// Timeout for every call to another node.
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    /// Address peers should use when the binds are unspecified (0.0.0.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertise_ip: Option<IpAddr>,
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NodeError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, NodeError> {
        let config: NodeConfig =
            serde_json::from_str(text).map_err(|e| NodeError::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        let invalid = |m: String| Err(NodeError::ConfigInvalid(m));
        if self.node_id.is_empty() {
            return invalid("node_id must not be empty".into());
        }
        if self.controller_bind == self.service_bind && self.service_bind.port() != 0 {
            return invalid("controller and service must bind different addresses".into());
        }
        self.policy
            .validate()
            .map_err(|e| NodeError::ConfigInvalid(e.to_string()))?;
        if self.discovery.heartbeat_interval_ms == 0 || self.discovery.probe_timeout_ms == 0 {
            return invalid("heartbeat interval and probe timeout must be positive".into());
        }
        let mut seen = HashSet::new();
        for s in &self.sensors {
            if s.period_ms == 0 {
                return invalid(format!("sensor {} has a zero period", s.id));
            }
            if !seen.insert(&s.id) {
                return invalid(format!("sensor {} declared twice", s.id));
            }
        }
        let mut seen = HashSet::new();
        for a in &self.actuators {
            if !seen.insert(&a.id) {
                return invalid(format!("actuator {} declared twice", a.id));
            }
        }
        for (image, profile) in &self.workloads {
            if profile.service_time_ms == 0 {
                return invalid(format!("workload {image} has a zero service time"));
            }
        }
        if let Some(owned) = &self.owned_workload {
            if !self.sensors.iter().any(|s| s.id == owned.sensor_id) {
                return invalid(format!("owned workload reads unknown sensor {}", owned.sensor_id));
            }
            if !self.actuators.iter().any(|a| a.id == owned.actuator_id) {
                return invalid(format!("owned workload drives unknown actuator {}", owned.actuator_id));
            }
        }
        if let EnergyAdapterConfig::Virtual {
            capacity,
            initial_charge,
            phi,
            varphi,
            slot_ms,
            ..
        } = &self.adapters.energy
        {
            if !(*capacity > 0.0) || !(0.0..=*capacity).contains(initial_charge) || !(*phi >= 0.0) || !(*varphi >= 0.0) {
                return invalid("virtual battery needs capacity > 0, 0 <= charge <= capacity and non-negative costs".into());
            }
            if *slot_ms == Some(0) {
                return invalid("virtual battery slot_ms must be positive".into());
            }
        }
        if let PeerSpace::Subnet { interface, netmask, service_port } = &self.peers {
            AddressSpace::from_subnet(*interface, *netmask, *service_port)
                .map_err(|e| NodeError::ConfigInvalid(e.to_string()))?;
        }
        if self.max_workloads == 0 {
            return invalid("max_workloads must be at least 1".into());
        }
        Ok(())
    }

    pub fn service_time_ms(&self, image_ref: &str) -> u64 {
        self.workloads.get(image_ref).map_or(DEFAULT_SERVICE_TIME_MS, |p| p.service_time_ms)
    }

    /// The scan space around `service`, the node's bound service endpoint.
    pub fn address_space(&self, service: SocketAddr) -> AddressSpace {
        match &self.peers {
            PeerSpace::Subnet { interface, netmask, service_port } => {
                AddressSpace::from_subnet(*interface, *netmask, *service_port).expect("validated")
            }
            PeerSpace::Endpoints { endpoints } => AddressSpace::from_endpoints(service, endpoints.iter().copied()),
        }
    }
}

/// Service time used for images without a declared profile.
pub const DEFAULT_SERVICE_TIME_MS: u64 = 500;
