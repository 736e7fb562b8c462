//! Peer discovery by logical-address scan and the registry of peers seen
//! through their presence heartbeats.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeRef;

pub const HISTORY_LIMIT: usize = 64;
/// Missed heartbeats after which a peer is treated as gone.
pub const MISSED_BEATS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("netmask {0} is not contiguous")]
    BadNetmask(Ipv4Addr),
    #[error("subnet of {0} hosts is too large to scan")]
    SubnetTooLarge(u64),
    #[error("malformed presence report: {0}")]
    MalformedReport(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub heartbeat_interval_ms: u64,
    pub probe_timeout_ms: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_ms: 2000,
            probe_timeout_ms: 500,
        }
    }
}

impl DiscoveryConfig {
    pub fn liveness_window_ms(&self) -> u64 {
        MISSED_BEATS * self.heartbeat_interval_ms
    }

    pub fn probe_timeout(&self) -> Duration {
        Duration::from_millis(self.probe_timeout_ms)
    }
}

/// Candidate service endpoints around a source node, ascending, source excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSpace {
    pub interface_address: IpAddr,
    pub netmask: Option<Ipv4Addr>,
    enumerated: Vec<SocketAddr>,
}

const MAX_SCAN_HOSTS: u64 = 1 << 16;

impl AddressSpace {
    /// Every host address of the IPv4 subnet containing `interface`, paired
    /// with the well-known service port.
    pub fn from_subnet(interface: Ipv4Addr, netmask: Ipv4Addr, service_port: u16) -> Result<Self, DiscoveryError> {
        let mask = u32::from(netmask);
        if mask.leading_ones() + mask.trailing_zeros() != 32 {
            return Err(DiscoveryError::BadNetmask(netmask));
        }
        let network = u32::from(interface) & mask;
        let size = (!mask as u64) + 1;
        if size > MAX_SCAN_HOSTS {
            return Err(DiscoveryError::SubnetTooLarge(size));
        }
        // /31 and /32 have no network or broadcast address to skip
        let (first, last) = if size <= 2 {
            (network as u64, network as u64 + size - 1)
        } else {
            (network as u64 + 1, network as u64 + size - 2)
        };
        let enumerated = (first..=last)
            .map(|a| Ipv4Addr::from(a as u32))
            .filter(|ip| *ip != interface)
            .map(|ip| SocketAddr::new(IpAddr::V4(ip), service_port))
            .collect();
        Ok(Self {
            interface_address: IpAddr::V4(interface),
            netmask: Some(netmask),
            enumerated,
        })
    }

    /// A declared endpoint list, as used by simulations and loopback tests.
    pub fn from_endpoints(source_service: SocketAddr, endpoints: impl IntoIterator<Item = SocketAddr>) -> Self {
        let set: BTreeSet<SocketAddr> = endpoints.into_iter().filter(|e| *e != source_service).collect();
        Self {
            interface_address: source_service.ip(),
            netmask: None,
            enumerated: set.into_iter().collect(),
        }
    }

    pub fn candidates(&self) -> &[SocketAddr] {
        &self.enumerated
    }

    pub fn is_empty(&self) -> bool {
        self.enumerated.is_empty()
    }
}

/// Answer to a presence probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceReply {
    pub alive: bool,
    pub node_id: String,
    pub controller_address: SocketAddr,
    pub service_address: SocketAddr,
    #[serde(default)]
    pub exec_status: Vec<String>,
}

impl PresenceReply {
    pub fn node(&self) -> Option<NodeRef> {
        NodeRef::new(self.node_id.clone(), self.controller_address, self.service_address).ok()
    }
}

pub trait PresenceProbe {
    /// `None` when the candidate does not answer in time.
    fn probe(&mut self, service: SocketAddr) -> Option<PresenceReply>;
}

/// Keeps, in enumeration order, the candidates whose probe reported alive.
pub fn assemble_scan(
    source: &NodeRef,
    space: &AddressSpace,
    replies: impl IntoIterator<Item = Option<PresenceReply>>,
) -> Vec<NodeRef> {
    space
        .candidates()
        .iter()
        .zip(replies)
        .filter_map(|(_, reply)| reply.filter(|r| r.alive))
        .filter_map(|r| r.node())
        .filter(|n| n.node_id != source.node_id)
        .collect()
}

/// Probes every candidate of `space` in order; a silent candidate is simply
/// absent from the result.
pub fn discover_rpis(source: &NodeRef, space: &AddressSpace, probe: &mut dyn PresenceProbe) -> Vec<NodeRef> {
    let replies: Vec<_> = space.candidates().iter().map(|c| probe.probe(*c)).collect();
    assemble_scan(source, space, replies)
}

/// Heartbeat sent by a node's presence signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceReport {
    pub node_id: String,
    pub controller_address: SocketAddr,
    pub service_address: SocketAddr,
    pub timestamp_ms: u64,
    #[serde(default)]
    pub exec_status: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadOutcome {
    pub success: bool,
    pub duration_ms: u64,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub node: NodeRef,
    pub last_seen: u64,
    pub exec_status: Vec<String>,
    pub history: VecDeque<OffloadOutcome>,
}

impl RegistryEntry {
    pub fn record(&mut self, outcome: OffloadOutcome) {
        if self.history.len() == HISTORY_LIMIT {
            self.history.pop_front();
        }
        self.history.push_back(outcome);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistryUpdate {
    Inserted,
    Updated,
    /// Report older than what is already known for that peer.
    IgnoredStale,
}

/// Peers known from presence heartbeats.
#[derive(Debug, Clone, Serialize)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
    liveness_window_ms: u64,
    rejected: u64,
}

impl Registry {
    pub fn new(liveness_window_ms: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            liveness_window_ms,
            rejected: 0,
        }
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn ingest(&mut self, report: PresenceReport) -> Result<RegistryUpdate, DiscoveryError> {
        let malformed = if report.node_id.trim().is_empty() {
            Some("empty node_id")
        } else if report.controller_address == report.service_address {
            Some("controller and service addresses coincide")
        } else {
            None
        };
        if let Some(why) = malformed {
            self.rejected += 1;
            return Err(DiscoveryError::MalformedReport(why));
        }
        let node = NodeRef {
            node_id: report.node_id.clone(),
            controller_address: report.controller_address,
            service_address: report.service_address,
        };
        match self.entries.get_mut(&report.node_id) {
            Some(entry) if report.timestamp_ms < entry.last_seen => Ok(RegistryUpdate::IgnoredStale),
            Some(entry) => {
                entry.node = node;
                entry.last_seen = report.timestamp_ms;
                entry.exec_status = report.exec_status;
                Ok(RegistryUpdate::Updated)
            }
            None => {
                self.entries.insert(
                    report.node_id,
                    RegistryEntry {
                        node,
                        last_seen: report.timestamp_ms,
                        exec_status: report.exec_status,
                        history: VecDeque::new(),
                    },
                );
                Ok(RegistryUpdate::Inserted)
            }
        }
    }

    fn prune(&mut self, now_ms: u64) {
        let window = self.liveness_window_ms;
        self.entries
            .retain(|_, e| now_ms.saturating_sub(e.last_seen) <= window);
    }

    /// Live peers ordered by service address; stale entries are dropped.
    pub fn live(&mut self, now_ms: u64) -> Vec<NodeRef> {
        self.prune(now_ms);
        let mut nodes: Vec<NodeRef> = self.entries.values().map(|e| e.node.clone()).collect();
        nodes.sort_by_key(|n| n.service_address);
        nodes
    }

    pub fn entries(&mut self, now_ms: u64) -> Vec<RegistryEntry> {
        self.prune(now_ms);
        self.entries.values().cloned().collect()
    }

    pub fn get(&self, node_id: &str) -> Option<&RegistryEntry> {
        self.entries.get(node_id)
    }

    pub fn record_outcome(&mut self, node_id: &str, outcome: OffloadOutcome) {
        if let Some(entry) = self.entries.get_mut(node_id) {
            entry.record(outcome);
        }
    }
}
