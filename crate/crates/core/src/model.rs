//! Domain types and the per-timeslot energy model shared by the planner,
//! the policy loop, the node daemon and the simulator.
//!
//! Energy is measured in abstract units; scenarios usually express a battery
//! as a percentage of its capacity so that policy thresholds read naturally.

use std::fmt;
use std::net::SocketAddr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("locally initiated count {local} exceeds hosted count {hosted}")]
    LocalExceedsHosted { hosted: u32, local: u32 },
    #[error("capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("battery charge {charge} outside [0, {capacity}]")]
    ChargeOutOfRange { charge: f64, capacity: f64 },
    #[error("energy cost must be non-negative, got {0}")]
    NegativeCost(f64),
    #[error("controller and service addresses must differ for node {0}")]
    SharedAddress(String),
    #[error("horizon must have at least one slot and a positive slot duration")]
    EmptyHorizon,
    #[error("invalid workload: {0}")]
    InvalidWorkload(&'static str),
}

/// Identity and the two endpoints of one peer node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_id: String,
    pub controller_address: SocketAddr,
    pub service_address: SocketAddr,
}

impl NodeRef {
    pub fn new(
        node_id: impl Into<String>,
        controller_address: SocketAddr,
        service_address: SocketAddr,
    ) -> Result<Self, ModelError> {
        let node_id = node_id.into();
        if controller_address == service_address {
            return Err(ModelError::SharedAddress(node_id));
        }
        Ok(Self {
            node_id,
            controller_address,
            service_address,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.controller_address == self.service_address {
            return Err(ModelError::SharedAddress(self.node_id.clone()));
        }
        Ok(())
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.node_id, self.service_address)
    }
}

/// Battery and cost parameters of one node at a slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub battery_charge: f64,
    pub capacity: f64,
    /// Solar energy harvested during the current slot.
    pub solar_input: f64,
    /// Energy one hosted microservice needs per slot for computation.
    pub compute_cost_per_ms: f64,
    /// Extra energy per slot for a microservice whose data lives on another node.
    pub network_cost_per_ms: f64,
}

impl EnergyState {
    pub fn new(
        battery_charge: f64,
        capacity: f64,
        compute_cost_per_ms: f64,
        network_cost_per_ms: f64,
    ) -> Result<Self, ModelError> {
        let state = Self {
            battery_charge,
            capacity,
            solar_input: 0.0,
            compute_cost_per_ms,
            network_cost_per_ms,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.capacity > 0.0) {
            return Err(ModelError::NonPositiveCapacity(self.capacity));
        }
        if !(0.0..=self.capacity).contains(&self.battery_charge) {
            return Err(ModelError::ChargeOutOfRange {
                charge: self.battery_charge,
                capacity: self.capacity,
            });
        }
        for cost in [self.compute_cost_per_ms, self.network_cost_per_ms] {
            if !(cost >= 0.0) {
                return Err(ModelError::NegativeCost(cost));
            }
        }
        Ok(())
    }

    pub fn battery_pct(&self) -> f64 {
        100.0 * self.battery_charge / self.capacity
    }

    /// Energy drawn by this node for the given load.
    pub fn consumption(&self, load: LoadState) -> Result<f64, ModelError> {
        slot_consumption(
            self.compute_cost_per_ms,
            self.network_cost_per_ms,
            load.hosted_count,
            load.locally_initiated_count,
        )
    }
}

/// Microservices hosted by a node in one slot, and how many of them it initiated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadState {
    pub hosted_count: u32,
    pub locally_initiated_count: u32,
}

impl LoadState {
    pub fn new(hosted_count: u32, locally_initiated_count: u32) -> Result<Self, ModelError> {
        if locally_initiated_count > hosted_count {
            return Err(ModelError::LocalExceedsHosted {
                hosted: hosted_count,
                local: locally_initiated_count,
            });
        }
        Ok(Self {
            hosted_count,
            locally_initiated_count,
        })
    }

    pub fn offloaded_count(&self) -> u32 {
        self.hosted_count - self.locally_initiated_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub num_slots: usize,
    #[serde(with = "duration_ms", rename = "slot_duration_ms")]
    pub slot_duration: Duration,
}

impl Horizon {
    pub fn new(num_slots: usize, slot_duration: Duration) -> Result<Self, ModelError> {
        let horizon = Self {
            num_slots,
            slot_duration,
        };
        horizon.validate()?;
        Ok(horizon)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_slots == 0 || self.slot_duration.is_zero() {
            return Err(ModelError::EmptyHorizon);
        }
        Ok(())
    }

    pub fn slot_ms(&self) -> u64 {
        self.slot_duration.as_millis() as u64
    }
}

/// A homogeneous microservice description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub image_ref: String,
    pub service_time_ms: u64,
    pub input_period_ms: u64,
    pub count: usize,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.count == 0 {
            return Err(ModelError::InvalidWorkload("count must be at least 1"));
        }
        if self.service_time_ms == 0 {
            return Err(ModelError::InvalidWorkload("service_time_ms must be positive"));
        }
        if self.input_period_ms == 0 {
            return Err(ModelError::InvalidWorkload("input_period_ms must be positive"));
        }
        Ok(())
    }
}

/// Whether a node stays on for a slot: 0 when harvest plus residual charge
/// cannot cover the slot's consumption, 1 otherwise.
pub fn activity_indicator(solar_input: f64, prev_charge: f64, consumption: f64) -> u8 {
    if solar_input + prev_charge - consumption <= 0.0 {
        0
    } else {
        1
    }
}

/// Energy drawn in one slot by `hosted` microservices of which `local` were
/// initiated on this node. Offloaded ones also pay the networking cost.
pub fn slot_consumption(
    compute_cost: f64,
    network_cost: f64,
    hosted: u32,
    local: u32,
) -> Result<f64, ModelError> {
    if local > hosted {
        return Err(ModelError::LocalExceedsHosted { hosted, local });
    }
    Ok(compute_cost * f64::from(local) + (compute_cost + network_cost) * f64::from(hosted - local))
}

/// Number of slots in which a node was active.
pub fn operative_time(indicators: &[u8]) -> usize {
    indicators.iter().filter(|&&chi| chi != 0).count()
}

/// Advances a node's battery across one slot.
///
/// The harvest is added and clamped to capacity first; the consumption is
/// only drawn when the node is active for the slot. An inactive node runs
/// nothing and keeps whatever it harvested.
pub fn step_battery(state: &EnergyState, solar_input: f64, consumption: f64) -> (EnergyState, u8) {
    let prev = state.battery_charge;
    let charged = (prev + solar_input).min(state.capacity);
    let active = activity_indicator(solar_input, prev, consumption);
    let battery_charge = if active == 1 {
        // consumption < prev + solar, but the capacity clamp may have cut
        // the harvest below it; the charge bottoms out at zero.
        (charged - consumption).max(0.0)
    } else {
        charged
    };
    (
        EnergyState {
            battery_charge,
            solar_input,
            ..*state
        },
        active,
    )
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}
