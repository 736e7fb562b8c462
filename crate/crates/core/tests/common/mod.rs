#![allow(dead_code)]

pub mod cluster;

use std::time::Duration;

use edgemesh::model::{Horizon, WorkloadSpec};
use edgemesh::policy::PolicyParams;
use edgemesh::sim::{CpuModel, LinkModel, Scenario, ScenarioNode, Topology};

pub fn node(i: usize, capacity: f64, charge: f64, phi: f64, varphi: f64, solar: Vec<f64>) -> ScenarioNode {
    ScenarioNode {
        node_id: format!("n{i}"),
        controller_address: format!("10.0.0.{}:7000", i + 1).parse().unwrap(),
        service_address: format!("10.0.0.{}:7001", i + 1).parse().unwrap(),
        capacity,
        initial_charge: charge,
        phi,
        varphi,
        solar,
    }
}

pub fn scenario(nodes: Vec<ScenarioNode>, slots: usize, slot_ms: u64, workload: WorkloadSpec) -> Scenario {
    Scenario {
        name: "test".into(),
        seed: 1,
        horizon: Horizon::new(slots, Duration::from_millis(slot_ms)).unwrap(),
        topology: Topology::Mesh,
        workload,
        policy: PolicyParams::default(),
        nodes,
        sources: None,
        max_workloads_per_node: 2,
        cpu: CpuModel::default(),
        link: LinkModel::default(),
        service_jitter_ms: 0,
        stop_when_all_inactive: true,
    }
}

pub fn workload(service_time_ms: u64, input_period_ms: u64, count: usize) -> WorkloadSpec {
    WorkloadSpec {
        image_ref: "detector:1".into(),
        service_time_ms,
        input_period_ms,
        count,
    }
}

/// One always-powered node processing exactly `inputs` sensor inputs.
pub fn single_node_stream(service_time_ms: u64, input_period_ms: u64, inputs: u64) -> Scenario {
    let slots = 10;
    let slot_ms = input_period_ms * inputs / slots as u64;
    scenario(
        vec![node(0, 100.0, 100.0, 0.0, 0.0, vec![0.0; slots])],
        slots,
        slot_ms,
        workload(service_time_ms, input_period_ms, 1),
    )
}

/// Independent replay of the non-queueing drop rule: an input arriving while
/// the previous one is still being served is discarded.
pub fn drop_rule_percent(service_time_ms: u64, input_period_ms: u64, inputs: u64) -> f64 {
    let mut free_at = 0u64;
    let mut processed = 0u64;
    for k in 0..inputs {
        let arrival = k * input_period_ms;
        if arrival >= free_at {
            free_at = arrival + service_time_ms;
            processed += 1;
        }
    }
    100.0 * processed as f64 / inputs as f64
}
