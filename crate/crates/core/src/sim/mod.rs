//! Discrete-time multi-node simulator.
//!
//! Every slot runs the same phases: decide which nodes are powered, run the
//! policy loops of every source node against in-memory peers, draw the slot's
//! energy, push the sensor inputs through whichever workload is running, and
//! switch off nodes that could not cover their consumption. The nodes use the
//! same [`crate::policy`] and [`crate::discovery`] code as the daemon.

mod case_study;
mod export;
mod metrics;
mod scenario;

use std::collections::BTreeSet;
use std::net::SocketAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::discovery::{discover_rpis, AddressSpace, PresenceProbe, PresenceReply};
use crate::model::{step_battery, EnergyState, LoadState, NodeRef};
use crate::planner::{self, PlacementPlan, PlanError, PlanInstance, PlanNode};
use crate::policy::{EnergyAwarePolicy, EnvError, PolicyEnv, PolicyEvent, RemoteExecStatus, ResourcePolicy};

pub use case_study::{case_study, CASE_STUDY_JSON};
pub use export::{export_results, write_events_csv, write_metrics_csv, Summary};
pub use metrics::{processed_input_ratio, InputRatio, MetricsRecord, SimEvent, SlotMetrics};
pub use scenario::{CpuModel, LinkModel, Scenario, ScenarioNode, Topology};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
}

struct World<'a> {
    scenario: &'a Scenario,
    refs: Vec<NodeRef>,
    /// Battery percentage at the start of the current slot.
    pct: Vec<f64>,
    powered: Vec<bool>,
    /// Hosts currently running each microservice.
    hosts: Vec<BTreeSet<usize>>,
    contact: Vec<RemoteExecStatus>,
    busy_until: Vec<u64>,
    probes: Vec<u64>,
}

impl World<'_> {
    fn index_of(&self, node: &NodeRef) -> Option<usize> {
        self.refs.iter().position(|r| r.node_id == node.node_id)
    }

    fn hosted_on(&self, node: usize) -> usize {
        self.hosts.iter().filter(|h| h.contains(&node)).count()
    }
}

struct Probe<'w, 'a> {
    world: &'w World<'a>,
    sent: u64,
}

impl PresenceProbe for Probe<'_, '_> {
    fn probe(&mut self, service: SocketAddr) -> Option<PresenceReply> {
        self.sent += 1;
        let i = self.world.refs.iter().position(|r| r.service_address == service)?;
        if !self.world.powered[i] {
            return None;
        }
        let node = &self.world.refs[i];
        let image = &self.world.scenario.workload.image_ref;
        Some(PresenceReply {
            alive: true,
            node_id: node.node_id.clone(),
            controller_address: node.controller_address,
            service_address: node.service_address,
            exec_status: vec![image.clone(); self.world.hosted_on(i)],
        })
    }
}

/// The policy's view of the simulated cluster for one source node.
struct SimEnv<'w, 'a> {
    world: &'w mut World<'a>,
    source: usize,
    ms: usize,
    now: u64,
}

impl PolicyEnv for SimEnv<'_, '_> {
    fn source(&self) -> &NodeRef {
        &self.world.refs[self.source]
    }

    fn discover(&mut self) -> Vec<NodeRef> {
        let scenario = self.world.scenario;
        let Some(candidates) = scenario.topology.candidates(&scenario.nodes, self.source) else {
            return Vec::new();
        };
        let me = self.world.refs[self.source].clone();
        let space = AddressSpace::from_endpoints(
            me.service_address,
            candidates.iter().map(|&i| self.world.refs[i].service_address),
        );
        let mut probe = Probe {
            world: self.world,
            sent: 0,
        };
        let found = discover_rpis(&me, &space, &mut probe);
        let sent = probe.sent;
        self.world.probes[self.source] += sent;
        found
    }

    fn battery_of(&mut self, peer: &NodeRef) -> Result<f64, EnvError> {
        match self.world.index_of(peer) {
            Some(i) if self.world.powered[i] => Ok(self.world.pct[i]),
            _ => Err(EnvError::PeerUnreachable(peer.node_id.clone())),
        }
    }

    fn start(&mut self, host: &NodeRef, _image_ref: &str) -> Result<(), EnvError> {
        let h = self
            .world
            .index_of(host)
            .filter(|&h| self.world.powered[h])
            .ok_or_else(|| EnvError::PeerUnreachable(host.node_id.clone()))?;
        if h != self.source {
            let scenario = self.world.scenario;
            let refuse = |reason: &str| EnvError::Refused {
                node: host.node_id.clone(),
                reason: reason.into(),
            };
            if self.world.pct[h] <= scenario.policy.gamma {
                return Err(refuse("battery below acceptance threshold"));
            }
            if self.world.hosted_on(h) >= scenario.max_workloads_per_node {
                return Err(refuse("workload limit reached"));
            }
            self.world.contact[self.ms] = RemoteExecStatus::new(self.now);
        }
        if self.world.hosts[self.ms].insert(h) {
            self.world.busy_until[self.ms] = 0;
        }
        Ok(())
    }

    fn stop(&mut self, host: &NodeRef, _image_ref: &str) -> Result<(), EnvError> {
        let h = self
            .world
            .index_of(host)
            .ok_or_else(|| EnvError::PeerUnreachable(host.node_id.clone()))?;
        self.world.hosts[self.ms].remove(&h);
        if self.world.powered[h] {
            Ok(())
        } else {
            Err(EnvError::PeerUnreachable(host.node_id.clone()))
        }
    }

    fn remote_healthy(&mut self) -> bool {
        let timeout = self.world.scenario.policy.remote_timeout();
        self.world.contact[self.ms].refresh(timeout, self.now)
    }
}

fn event_row(slot: usize, time_ms: u64, node_id: &str, event: &PolicyEvent) -> Option<SimEvent> {
    let (kind, detail) = match event {
        PolicyEvent::LocalStart => ("local_start", String::new()),
        PolicyEvent::Offload { destination } => ("offload", destination.clone()),
        PolicyEvent::Repatriate { from } => ("repatriate", from.clone()),
        PolicyEvent::RemoteLost { from } => ("remote_lost", from.clone()),
        PolicyEvent::Fallback => ("fallback", String::new()),
        PolicyEvent::StartFailed { node, reason } => ("start_failed", format!("{node}: {reason}")),
        PolicyEvent::PeerSkipped { .. } | PolicyEvent::Scan { .. } => return None,
    };
    Some(SimEvent {
        slot,
        time_ms,
        node_id: node_id.to_string(),
        kind: kind.to_string(),
        detail,
    })
}

fn sim_event(slot: usize, time_ms: u64, node_id: &str, kind: &str) -> SimEvent {
    SimEvent {
        slot,
        time_ms,
        node_id: node_id.to_string(),
        kind: kind.to_string(),
        detail: String::new(),
    }
}

/// Runs a scenario to its horizon, or until every node is off when
/// `stop_when_all_inactive` is set.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsRecord, SimError> {
    scenario.validate()?;
    let n = scenario.nodes.len();
    let sources = scenario.source_indices();
    let m = sources.len();
    let slot_ms = scenario.horizon.slot_ms();
    let loop_ms = scenario.policy.loop_period_ms;
    let spec = &scenario.workload;

    let mut world = World {
        scenario,
        refs: scenario.nodes.iter().map(ScenarioNode::node_ref).collect(),
        pct: vec![0.0; n],
        powered: vec![false; n],
        hosts: vec![BTreeSet::new(); m],
        contact: vec![RemoteExecStatus::new(0); m],
        busy_until: vec![0; m],
        probes: vec![0; n],
    };
    let mut energy: Vec<EnergyState> = scenario.nodes.iter().map(ScenarioNode::energy).collect();
    let mut policies: Vec<EnergyAwarePolicy> = (0..m)
        .map(|_| EnergyAwarePolicy::new(scenario.policy.clone(), spec.image_ref.clone()))
        .collect();
    let own: Vec<usize> = (0..n).map(|i| sources.iter().filter(|&&s| s == i).count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut record = MetricsRecord {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        node_ids: world.refs.iter().map(|r| r.node_id.clone()).collect(),
        workload: Some(spec.clone()),
        slot_ms,
        num_slots: scenario.horizon.num_slots,
        sources: sources.clone(),
        ..MetricsRecord::default()
    };
    let mut prev_active = vec![true; n];

    for t in 0..scenario.horizon.num_slots {
        let start = t as u64 * slot_ms;
        let end = start + slot_ms;

        // A node that was on stays on; one that was off boots again once
        // harvest plus residual charge covers its own workload.
        for i in 0..n {
            let node = &scenario.nodes[i];
            let was = world.powered[i];
            world.powered[i] = prev_active[i]
                || energy[i].battery_charge + node.solar[t] - node.phi * own[i] as f64 > 0.0;
            if t > 0 && world.powered[i] && !was {
                record.events.push(sim_event(t, start, &node.node_id, "node_on"));
            }
            world.pct[i] = energy[i].battery_pct();
        }

        let mut offloads = vec![0u32; n];
        for k in 0..scenario.iterations_per_slot() {
            let now = start + k * loop_ms;
            for (j, policy) in policies.iter_mut().enumerate() {
                let s = sources[j];
                if !world.powered[s] {
                    continue;
                }
                // deliveries to a running remote instance are acknowledged
                let acked = world.hosts[j]
                    .iter()
                    .any(|&h| h != s && world.powered[h]);
                if acked {
                    world.contact[j].touch(now);
                }
                let pct = world.pct[s];
                let mut env = SimEnv {
                    world: &mut world,
                    source: s,
                    ms: j,
                    now,
                };
                let events = policy.iterate(pct, &mut env);
                for event in &events {
                    if matches!(event, PolicyEvent::Offload { .. }) {
                        offloads[s] += 1;
                    }
                    if let Some(row) = event_row(t, now, &record.node_ids[s], event) {
                        record.events.push(row);
                    }
                }
            }
        }
        debug_assert!(world.hosts.iter().all(|h| h.len() <= 1));
        record
            .placements
            .push(world.hosts.iter().map(|h| h.first().copied()).collect());

        let mut loads = vec![LoadState::default(); n];
        for (j, hosts) in world.hosts.iter().enumerate() {
            for &h in hosts {
                loads[h].hosted_count += 1;
                if h == sources[j] {
                    loads[h].locally_initiated_count += 1;
                }
            }
        }
        let mut active = vec![false; n];
        let mut consumption = vec![0.0; n];
        for i in 0..n {
            let kappa = scenario.nodes[i].solar[t];
            if world.powered[i] {
                consumption[i] = energy[i]
                    .consumption(loads[i])
                    .expect("local count never exceeds hosted count");
                let (next, chi) = step_battery(&energy[i], kappa, consumption[i]);
                energy[i] = next;
                active[i] = chi == 1;
            } else {
                energy[i].battery_charge = (energy[i].battery_charge + kappa).min(energy[i].capacity);
            }
        }

        let mut generated = vec![0u64; n];
        let mut processed = vec![0u64; n];
        let mut proc_total = vec![0u64; n];
        for j in 0..m {
            let s = sources[j];
            if !active[s] {
                continue;
            }
            let host = world.hosts[j].first().copied().filter(|&h| active[h]);
            let period = spec.input_period_ms;
            let mut g = start.div_ceil(period) * period;
            while g < end {
                generated[s] += 1;
                if let Some(h) = host {
                    let remote = h != s;
                    let arrival = g + if remote { scenario.link.transfer_ms(scenario.link.payload_bytes) } else { 0 };
                    if arrival >= world.busy_until[j] {
                        let jitter = if scenario.service_jitter_ms > 0 {
                            rng.random_range(0..=scenario.service_jitter_ms)
                        } else {
                            0
                        };
                        world.busy_until[j] = arrival + spec.service_time_ms + jitter;
                        let reply = if remote { scenario.link.transfer_ms(scenario.link.command_bytes) } else { 0 };
                        processed[s] += 1;
                        proc_total[s] += world.busy_until[j] + reply - g;
                    }
                }
                g += period;
            }
        }

        for i in 0..n {
            if active[i] {
                continue;
            }
            if world.powered[i] {
                record.events.push(sim_event(t, end, &record.node_ids[i], "node_off"));
            }
            for (j, hosts) in world.hosts.iter_mut().enumerate() {
                hosts.remove(&i);
                if sources[j] == i {
                    hosts.clear();
                    policies[j].reset();
                }
            }
            world.powered[i] = false;
        }

        let running: Vec<usize> = (0..n).map(|i| if active[i] { loads[i].hosted_count as usize } else { 0 }).collect();
        for i in 0..n {
            record.rows.push(SlotMetrics {
                slot: t,
                node_id: record.node_ids[i].clone(),
                battery_pct: energy[i].battery_pct(),
                cpu_pct: scenario.cpu.utilization(active[i], running[i]),
                workloads: running[i],
                generated: generated[i],
                processed: processed[i],
                mean_proc_ms: if processed[i] > 0 { proc_total[i] as f64 / processed[i] as f64 } else { 0.0 },
                offload_events: offloads[i],
                active: active[i],
                battery_charge: energy[i].battery_charge,
                consumption: if active[i] { consumption[i] } else { 0.0 },
                hosted: loads[i].hosted_count as usize,
                local: loads[i].locally_initiated_count as usize,
            });
        }
        record.slots_run = t + 1;
        prev_active = active;
        if scenario.stop_when_all_inactive && prev_active.iter().all(|a| !a) {
            break;
        }
    }
    record.probes = world.probes;
    Ok(record)
}

/// The planner instance describing the same nodes, horizon and homes as `scenario`.
pub fn plan_instance(scenario: &Scenario) -> PlanInstance {
    PlanInstance {
        nodes: scenario
            .nodes
            .iter()
            .map(|n| PlanNode {
                id: n.node_id.clone(),
                capacity: n.capacity,
                initial_charge: n.initial_charge,
                phi: n.phi,
                varphi: n.varphi,
                solar: n.solar.clone(),
            })
            .collect(),
        num_slots: scenario.horizon.num_slots,
        m: scenario.workload.count,
        max_per_node: scenario.max_workloads_per_node.max(1),
        homes: Some(
            scenario
                .source_indices()
                .into_iter()
                .map(|i| scenario.nodes[i].node_id.clone())
                .collect(),
        ),
    }
}

/// Converts a full-horizon run into a placement plan. A microservice with no
/// running instance is charged to its home node, which is off in that slot.
pub fn trace_to_plan(scenario: &Scenario, record: &MetricsRecord) -> Result<(PlanInstance, PlacementPlan), PlanError> {
    let instance = plan_instance(scenario);
    if record.placements.len() != instance.num_slots {
        return Err(PlanError::DimensionMismatch(format!(
            "run stopped after {} of {} slots",
            record.placements.len(),
            instance.num_slots
        )));
    }
    let assignment = record
        .placements
        .iter()
        .map(|row| {
            row.iter()
                .zip(&record.sources)
                .map(|(host, &home)| host.unwrap_or(home))
                .collect()
        })
        .collect();
    let plan = planner::plan_from_assignment(&instance, record.sources.clone(), assignment)?;
    Ok((instance, plan))
}
