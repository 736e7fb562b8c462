use std::collections::{BTreeMap, HashSet};
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{EnergyState, Horizon, NodeRef, WorkloadSpec};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioNode {
    pub node_id: String,
    pub controller_address: SocketAddr,
    pub service_address: SocketAddr,
    pub capacity: f64,
    pub initial_charge: f64,
    /// Compute energy per hosted microservice per slot.
    pub phi: f64,
    /// Networking surcharge per offloaded microservice per slot.
    pub varphi: f64,
    /// Harvest per slot, one entry per slot of the horizon.
    pub solar: Vec<f64>,
}

impl ScenarioNode {
    pub fn node_ref(&self) -> NodeRef {
        NodeRef {
            node_id: self.node_id.clone(),
            controller_address: self.controller_address,
            service_address: self.service_address,
        }
    }

    pub fn energy(&self) -> EnergyState {
        EnergyState {
            battery_charge: self.initial_charge,
            capacity: self.capacity,
            solar_input: 0.0,
            compute_cost_per_ms: self.phi,
            network_cost_per_ms: self.varphi,
        }
    }
}

/// Who may hand work to whom.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Every node may offload to every other node.
    #[default]
    Mesh,
    /// Clients offload only to the server; the server never offloads.
    ClientServer { server: String },
    /// The master offloads to slaves; slaves never scan.
    MasterSlave { master: String },
    /// A node in tier k offloads only to tier k+1.
    Hierarchical { tiers: BTreeMap<String, u8> },
}

impl Topology {
    fn referenced(&self) -> Vec<&str> {
        match self {
            Topology::Mesh => vec![],
            Topology::ClientServer { server } => vec![server],
            Topology::MasterSlave { master } => vec![master],
            Topology::Hierarchical { tiers } => tiers.keys().map(String::as_str).collect(),
        }
    }

    /// Nodes `source` may scan, or `None` when its role never initiates discovery.
    pub fn candidates(&self, nodes: &[ScenarioNode], source: usize) -> Option<Vec<usize>> {
        let me = &nodes[source].node_id;
        let others = (0..nodes.len()).filter(|&i| i != source);
        match self {
            Topology::Mesh => Some(others.collect()),
            Topology::ClientServer { server } => {
                (me != server).then(|| others.filter(|&i| &nodes[i].node_id == server).collect())
            }
            Topology::MasterSlave { master } => {
                (me == master).then(|| others.collect())
            }
            Topology::Hierarchical { tiers } => {
                let tier = *tiers.get(me)?;
                let below: Vec<usize> = others
                    .filter(|&i| tiers.get(&nodes[i].node_id) == Some(&(tier + 1)))
                    .collect();
                (!below.is_empty()).then_some(below)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuModel {
    pub per_workload_pct: f64,
    pub floor_pct: f64,
}

impl Default for CpuModel {
    fn default() -> Self {
        Self {
            per_workload_pct: 30.0,
            floor_pct: 2.0,
        }
    }
}

impl CpuModel {
    pub fn utilization(&self, active: bool, hosted: usize) -> f64 {
        if !active {
            return 0.0;
        }
        (self.floor_pct + self.per_workload_pct * hosted as f64).min(100.0)
    }
}

/// Fixed per-message latency plus a bandwidth-derived transfer time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub latency_ms: u64,
    pub bandwidth_mbps: f64,
    /// Size of one sensor sample sent to a remote workload.
    pub payload_bytes: u64,
    /// Size of one actuation command sent back.
    pub command_bytes: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            latency_ms: 5,
            bandwidth_mbps: 2.0,
            payload_bytes: 25_000,
            command_bytes: 128,
        }
    }
}

impl LinkModel {
    pub fn transfer_ms(&self, bytes: u64) -> u64 {
        let secs = (bytes * 8) as f64 / (self.bandwidth_mbps * 1e6);
        self.latency_ms + (secs * 1000.0).ceil() as u64
    }

    /// Network time added to one remotely processed input.
    pub fn round_trip_ms(&self) -> u64 {
        self.transfer_ms(self.payload_bytes) + self.transfer_ms(self.command_bytes)
    }
}

fn default_max_workloads() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: Horizon,
    #[serde(default)]
    pub topology: Topology,
    pub workload: WorkloadSpec,
    pub policy: PolicyParams,
    pub nodes: Vec<ScenarioNode>,
    /// Node ids initiating the `workload.count` microservices, one each.
    /// Defaults to the first `count` nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<String>>,
    #[serde(default = "default_max_workloads")]
    pub max_workloads_per_node: usize,
    #[serde(default)]
    pub cpu: CpuModel,
    #[serde(default)]
    pub link: LinkModel,
    /// Uniform jitter applied to each service time, drawn from the seeded RNG.
    #[serde(default)]
    pub service_jitter_ms: u64,
    #[serde(default = "default_true")]
    pub stop_when_all_inactive: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn source_indices(&self) -> Vec<usize> {
        match &self.sources {
            Some(ids) => ids
                .iter()
                .map(|id| self.nodes.iter().position(|n| &n.node_id == id).expect("validated"))
                .collect(),
            None => (0..self.workload.count).collect(),
        }
    }

    pub fn iterations_per_slot(&self) -> u64 {
        (self.horizon.slot_ms() / self.policy.loop_period_ms).max(1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::ScenarioInvalid(msg));
        self.horizon
            .validate()
            .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        self.workload
            .validate()
            .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        self.policy
            .validate()
            .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        if self.nodes.is_empty() {
            return invalid("scenario declares no nodes".into());
        }
        let mut ids = HashSet::new();
        let mut endpoints = HashSet::new();
        for node in &self.nodes {
            if !ids.insert(node.node_id.as_str()) {
                return invalid(format!("duplicate node id {}", node.node_id));
            }
            node.node_ref()
                .validate()
                .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
            for ep in [node.controller_address, node.service_address] {
                if !endpoints.insert(ep) {
                    return invalid(format!("endpoint {ep} declared twice"));
                }
            }
            if node.solar.len() != self.horizon.num_slots {
                return invalid(format!(
                    "node {} has {} solar entries for a {}-slot horizon",
                    node.node_id,
                    node.solar.len(),
                    self.horizon.num_slots
                ));
            }
            if node.solar.iter().any(|k| !(*k >= 0.0)) {
                return invalid(format!("node {} has a negative solar input", node.node_id));
            }
            node.energy()
                .validate()
                .map_err(|e| SimError::ScenarioInvalid(format!("node {}: {e}", node.node_id)))?;
        }
        for id in self.topology.referenced() {
            if !ids.contains(id) {
                return invalid(format!("topology references unknown node {id}"));
            }
        }
        match &self.sources {
            Some(sources) => {
                if sources.len() != self.workload.count {
                    return invalid(format!(
                        "{} sources for {} microservices",
                        sources.len(),
                        self.workload.count
                    ));
                }
                let mut seen = HashSet::new();
                for s in sources {
                    if !ids.contains(s.as_str()) {
                        return invalid(format!("unknown source node {s}"));
                    }
                    if !seen.insert(s) {
                        return invalid(format!("node {s} listed twice as a source"));
                    }
                }
            }
            None if self.workload.count > self.nodes.len() => {
                return invalid(format!(
                    "{} microservices but only {} nodes to initiate them",
                    self.workload.count,
                    self.nodes.len()
                ));
            }
            None => {}
        }
        if self.max_workloads_per_node == 0 {
            return invalid("max_workloads_per_node must be at least 1".into());
        }
        if !(self.link.bandwidth_mbps > 0.0) {
            return invalid("link bandwidth must be positive".into());
        }
        Ok(())
    }
}
