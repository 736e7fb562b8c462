//! Greedy energy-aware resource management.
//!
//! Each node runs one loop iteration per period: start the workload locally
//! while the battery is healthy, hand it to the first discovered peer above
//! the destination floor when the battery drops to the offload threshold,
//! and bring it back once the battery recovers past the repatriation
//! threshold. A remote execution whose acknowledgements go stale is dropped
//! and the next iteration restarts the workload locally.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeRef;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("alpha, beta, gamma must satisfy 0 < alpha <= beta <= 100 and 0 < gamma <= 100 (got {alpha}, {beta}, {gamma})")]
    InvalidThresholds { alpha: f64, beta: f64, gamma: f64 },
    #[error("loop period must be positive")]
    ZeroPeriod,
}

/// Failures reported by the environment a policy runs in.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("peer {0} unreachable")]
    PeerUnreachable(String),
    #[error("start refused by {node}: {reason}")]
    Refused { node: String, reason: String },
    #[error("start failed on {node}: {reason}")]
    StartFailed { node: String, reason: String },
    #[error("stop failed on {node}: {reason}")]
    StopFailed { node: String, reason: String },
}

fn default_loop_period_ms() -> u64 {
    1000
}

fn default_remote_timeout_ms() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Offload when the battery percentage is at or below this.
    pub alpha: f64,
    /// Repatriate when the battery percentage rises above this.
    pub beta: f64,
    /// Destinations must report a battery percentage above this.
    pub gamma: f64,
    #[serde(default = "default_loop_period_ms")]
    pub loop_period_ms: u64,
    #[serde(default = "default_remote_timeout_ms")]
    pub remote_timeout_ms: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            alpha: 50.0,
            beta: 60.0,
            gamma: 70.0,
            loop_period_ms: default_loop_period_ms(),
            remote_timeout_ms: default_remote_timeout_ms(),
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = 0.0 < self.alpha
            && self.alpha <= self.beta
            && self.beta <= 100.0
            && 0.0 < self.gamma
            && self.gamma <= 100.0;
        if !ok {
            return Err(PolicyError::InvalidThresholds {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
            });
        }
        if self.loop_period_ms == 0 {
            return Err(PolicyError::ZeroPeriod);
        }
        Ok(())
    }

    pub fn loop_period(&self) -> Duration {
        Duration::from_millis(self.loop_period_ms)
    }

    pub fn remote_timeout(&self) -> Duration {
        Duration::from_millis(self.remote_timeout_ms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionFlags {
    pub local: bool,
    pub remote: bool,
    pub selected: Option<NodeRef>,
}

impl ExecutionFlags {
    pub fn is_idle(&self) -> bool {
        !self.local && !self.remote
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteExecStatus {
    pub healthy: bool,
    pub last_contact: u64,
}

impl RemoteExecStatus {
    pub fn new(last_contact: u64) -> Self {
        Self {
            healthy: true,
            last_contact,
        }
    }

    pub fn touch(&mut self, now_ms: u64) {
        self.last_contact = self.last_contact.max(now_ms);
        self.healthy = true;
    }

    pub fn refresh(&mut self, timeout: Duration, now_ms: u64) -> bool {
        self.healthy = check_remote_execution(self, timeout, now_ms);
        self.healthy
    }
}

/// Whether a remote execution counts as alive: the last acknowledgement is
/// at most `timeout` old. The boundary itself is still alive.
pub fn check_remote_execution(status: &RemoteExecStatus, timeout: Duration, now_ms: u64) -> bool {
    now_ms.saturating_sub(status.last_contact) <= timeout.as_millis() as u64
}

/// What a policy iteration did, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyEvent {
    LocalStart,
    Offload { destination: String },
    Repatriate { from: String },
    RemoteLost { from: String },
    /// No eligible destination (or it refused), so the workload was started locally.
    Fallback,
    PeerSkipped { peer: String },
    StartFailed { node: String, reason: String },
    Scan { candidates: usize },
}

/// Everything a policy needs from the outside world. Implemented over HTTP by
/// the node daemon and over in-memory state by the simulator.
pub trait PolicyEnv {
    /// The source node this policy manages.
    fn source(&self) -> &NodeRef;
    /// Peers answering presence probes, in scan order.
    fn discover(&mut self) -> Vec<NodeRef>;
    fn battery_of(&mut self, peer: &NodeRef) -> Result<f64, EnvError>;
    /// Starts the source's workload on `host` (the source itself for local runs).
    fn start(&mut self, host: &NodeRef, image_ref: &str) -> Result<(), EnvError>;
    fn stop(&mut self, host: &NodeRef, image_ref: &str) -> Result<(), EnvError>;
    /// Liveness of the current remote execution.
    fn remote_healthy(&mut self) -> bool;
}

/// Pluggable resource-management policy.
pub trait ResourcePolicy: Send {
    fn iterate(&mut self, battery_pct: f64, env: &mut dyn PolicyEnv) -> Vec<PolicyEvent>;
    fn flags(&self) -> &ExecutionFlags;
    /// Forget all execution state, as after a reboot.
    fn reset(&mut self);
}

/// The shipped single-workload energy-aware policy.
#[derive(Debug, Clone)]
pub struct EnergyAwarePolicy {
    pub params: PolicyParams,
    pub image_ref: String,
    flags: ExecutionFlags,
}

impl EnergyAwarePolicy {
    pub fn new(params: PolicyParams, image_ref: impl Into<String>) -> Self {
        Self {
            params,
            image_ref: image_ref.into(),
            flags: ExecutionFlags::default(),
        }
    }
}

impl ResourcePolicy for EnergyAwarePolicy {
    fn iterate(&mut self, battery_pct: f64, env: &mut dyn PolicyEnv) -> Vec<PolicyEvent> {
        let (flags, events) =
            manage_resource_step(self.flags.clone(), battery_pct, &self.params, &self.image_ref, env);
        self.flags = flags;
        events
    }

    fn flags(&self) -> &ExecutionFlags {
        &self.flags
    }

    fn reset(&mut self) {
        self.flags = ExecutionFlags::default();
    }
}

fn start_locally(flags: &mut ExecutionFlags, image_ref: &str, env: &mut dyn PolicyEnv, events: &mut Vec<PolicyEvent>) -> bool {
    let me = env.source().clone();
    match env.start(&me, image_ref) {
        Ok(()) => {
            flags.local = true;
            true
        }
        Err(e) => {
            events.push(PolicyEvent::StartFailed {
                node: me.node_id,
                reason: e.to_string(),
            });
            false
        }
    }
}

/// One iteration of the resource-management loop.
pub fn manage_resource_step(
    mut flags: ExecutionFlags,
    battery_pct: f64,
    params: &PolicyParams,
    image_ref: &str,
    env: &mut dyn PolicyEnv,
) -> (ExecutionFlags, Vec<PolicyEvent>) {
    let mut events = Vec::new();
    let me = env.source().clone();

    if battery_pct > params.alpha {
        if flags.is_idle() {
            if start_locally(&mut flags, image_ref, env, &mut events) {
                events.push(PolicyEvent::LocalStart);
            }
        } else if !flags.local && flags.remote && battery_pct > params.beta {
            if start_locally(&mut flags, image_ref, env, &mut events) {
                let from = flags.selected.take().expect("remote execution has a destination");
                // the destination may already be gone; the local copy is running either way
                let _ = env.stop(&from, image_ref);
                flags.remote = false;
                events.push(PolicyEvent::Repatriate { from: from.node_id });
            }
        }
    } else if !flags.remote {
        let peers = env.discover();
        events.push(PolicyEvent::Scan {
            candidates: peers.len(),
        });
        let mut selected = None;
        for peer in peers {
            match env.battery_of(&peer) {
                Ok(level) if level > params.gamma => {
                    selected = Some(peer);
                    break;
                }
                Ok(_) => {}
                Err(_) => events.push(PolicyEvent::PeerSkipped { peer: peer.node_id }),
            }
        }
        let offloaded = match selected {
            Some(dest) => match env.start(&dest, image_ref) {
                Ok(()) => {
                    flags.remote = true;
                    if flags.local {
                        let _ = env.stop(&me, image_ref);
                        flags.local = false;
                    }
                    events.push(PolicyEvent::Offload {
                        destination: dest.node_id.clone(),
                    });
                    flags.selected = Some(dest);
                    true
                }
                Err(e) => {
                    events.push(PolicyEvent::StartFailed {
                        node: dest.node_id,
                        reason: e.to_string(),
                    });
                    false
                }
            },
            None => false,
        };
        if !offloaded && !flags.local && start_locally(&mut flags, image_ref, env, &mut events) {
            events.push(PolicyEvent::Fallback);
        }
    }

    if flags.remote && !env.remote_healthy() {
        flags.remote = false;
        if let Some(from) = flags.selected.take() {
            let _ = env.stop(&from, image_ref);
            events.push(PolicyEvent::RemoteLost { from: from.node_id });
        }
    }

    (flags, events)
}
