use serde::{Deserialize, Serialize};

use crate::model::WorkloadSpec;

/// One node during one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub node_id: String,
    /// End-of-slot charge as a percentage of capacity.
    pub battery_pct: f64,
    pub cpu_pct: f64,
    /// Workloads actually running on the node (0 while it is off).
    pub workloads: usize,
    /// Sensor inputs produced by this node's sensors.
    pub generated: u64,
    /// Of those, how many reached a workload and were acted on.
    pub processed: u64,
    /// Mean generation-to-actuation time of the processed inputs.
    pub mean_proc_ms: f64,
    pub offload_events: u32,
    pub active: bool,
    pub battery_charge: f64,
    pub consumption: f64,
    pub hosted: usize,
    pub local: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub slot: usize,
    pub time_ms: u64,
    pub node_id: String,
    pub kind: String,
    #[serde(default)]
    pub detail: String,
}

/// Everything a simulation run produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub seed: u64,
    pub node_ids: Vec<String>,
    pub workload: Option<WorkloadSpec>,
    pub slot_ms: u64,
    pub num_slots: usize,
    pub slots_run: usize,
    /// Slot-major: all nodes of slot 0, then slot 1, and so on.
    pub rows: Vec<SlotMetrics>,
    pub events: Vec<SimEvent>,
    /// Node index initiating each microservice.
    pub sources: Vec<usize>,
    /// `placements[t][j]`: host of microservice `j` once slot `t`'s policy loops ran.
    pub placements: Vec<Vec<Option<usize>>>,
    /// Presence probes sent by each node.
    pub probes: Vec<u64>,
}

impl MetricsRecord {
    pub fn node_rows<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a SlotMetrics> + 'a {
        self.rows.iter().filter(move |r| r.node_id == node_id)
    }

    pub fn operative_times(&self) -> Vec<usize> {
        self.node_ids
            .iter()
            .map(|id| self.node_rows(id).filter(|r| r.active).count())
            .collect()
    }

    /// Smallest operative time over all nodes; 0 for an empty record.
    pub fn objective(&self) -> usize {
        self.operative_times().into_iter().min().unwrap_or(0)
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a SimEvent> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRatio {
    pub service_time_ms: u64,
    pub input_period_ms: u64,
    pub generated: u64,
    pub processed: u64,
    pub percent: f64,
}

/// Share of generated sensor inputs that were processed, in percent. Inputs
/// arriving while the workload is busy are dropped, never queued.
pub fn processed_input_ratio(record: &MetricsRecord) -> InputRatio {
    let generated: u64 = record.rows.iter().map(|r| r.generated).sum();
    let processed: u64 = record.rows.iter().map(|r| r.processed).sum();
    let percent = if generated == 0 {
        0.0
    } else {
        100.0 * processed as f64 / generated as f64
    };
    let (service_time_ms, input_period_ms) = record
        .workload
        .as_ref()
        .map_or((0, 0), |w| (w.service_time_ms, w.input_period_ms));
    InputRatio {
        service_time_ms,
        input_period_ms,
        generated,
        processed,
        percent,
    }
}
