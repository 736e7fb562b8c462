//! Exact max-min placement search.
//!
//! Given every node's battery, harvest trace and per-slot costs, find the
//! slot-by-slot placement of `m` homogeneous microservices that maximizes the
//! smallest operative time across nodes. The search is exhaustive with
//! memoization on the battery vector, so it is only offered for small
//! instances; it serves as the reference the greedy policy is scored against.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, EnergyState, LoadState};

pub const MAX_NODES: usize = 5;
pub const MAX_SLOTS: usize = 8;
pub const MAX_MICROSERVICES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("instance too large for exact search: n={nodes}, T={slots}, m={microservices} (limits n<={MAX_NODES}, T<={MAX_SLOTS}, m<={MAX_MICROSERVICES})")]
    SizeExceeded {
        nodes: usize,
        slots: usize,
        microservices: usize,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub capacity: f64,
    pub initial_charge: f64,
    pub phi: f64,
    pub varphi: f64,
    pub solar: Vec<f64>,
}

impl PlanNode {
    fn energy(&self) -> EnergyState {
        EnergyState {
            battery_charge: self.initial_charge,
            capacity: self.capacity,
            solar_input: 0.0,
            compute_cost_per_ms: self.phi,
            network_cost_per_ms: self.varphi,
        }
    }
}

fn default_max_per_node() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInstance {
    pub nodes: Vec<PlanNode>,
    #[serde(rename = "T")]
    pub num_slots: usize,
    pub m: usize,
    /// How many microservices one node may host in a slot.
    #[serde(default = "default_max_per_node")]
    pub max_per_node: usize,
    /// Fixed home node id per microservice. When absent, the slot-1 host of
    /// each microservice becomes its home.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homes: Option<Vec<String>>,
}

impl PlanInstance {
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::InvalidInstance(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let invalid = |msg: String| Err(PlanError::InvalidInstance(msg));
        if self.nodes.is_empty() {
            return invalid("no nodes".into());
        }
        if self.num_slots == 0 {
            return invalid("T must be at least 1".into());
        }
        if self.m == 0 {
            return invalid("m must be at least 1".into());
        }
        if self.max_per_node == 0 {
            return invalid("max_per_node must be at least 1".into());
        }
        let mut seen = HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                return invalid(format!("duplicate node id {}", node.id));
            }
            if node.solar.len() != self.num_slots {
                return Err(PlanError::DimensionMismatch(format!(
                    "node {} has {} solar entries, expected {}",
                    node.id,
                    node.solar.len(),
                    self.num_slots
                )));
            }
            if node.solar.iter().any(|k| !(*k >= 0.0)) {
                return invalid(format!("node {} has a negative solar input", node.id));
            }
            node.energy()
                .validate()
                .map_err(|e| PlanError::InvalidInstance(format!("node {}: {e}", node.id)))?;
        }
        if let Some(homes) = &self.homes {
            if homes.len() != self.m {
                return Err(PlanError::DimensionMismatch(format!(
                    "{} homes for {} microservices",
                    homes.len(),
                    self.m
                )));
            }
            if let Some(h) = homes.iter().find(|h| !seen.contains(h.as_str())) {
                return invalid(format!("unknown home node {h}"));
            }
        }
        Ok(())
    }

    fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    fn fixed_homes(&self) -> Option<Vec<usize>> {
        self.homes.as_ref().map(|homes| {
            homes
                .iter()
                .map(|h| self.node_index(h).expect("validated"))
                .collect()
        })
    }
}

/// A slot-by-slot placement together with the activity it produces.
///
/// `assignment[t][j]` is the node index hosting microservice `j` in slot `t`.
/// A node that cannot cover its load in a slot is inactive there and runs
/// nothing, so the indicator matrix is authoritative for what actually ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub node_ids: Vec<String>,
    pub homes: Vec<usize>,
    pub assignment: Vec<Vec<usize>>,
    /// `indicators[i][t]`: whether node `i` was active in slot `t`.
    pub indicators: Vec<Vec<u8>>,
    pub operative_times: Vec<usize>,
    pub objective: usize,
}

impl PlacementPlan {
    /// Microservices placed on each node in slot `t`.
    pub fn hosted_counts(&self, slot: usize) -> Vec<usize> {
        let mut counts = vec![0; self.node_ids.len()];
        for &host in &self.assignment[slot] {
            counts[host] += 1;
        }
        counts
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["slot", "microservice", "home", "host", "host_active"])?;
        for (slot, row) in self.assignment.iter().enumerate() {
            for (j, &host) in row.iter().enumerate() {
                writer.write_record([
                    slot.to_string(),
                    j.to_string(),
                    self.node_ids[self.homes[j]].clone(),
                    self.node_ids[host].clone(),
                    self.indicators[host][slot].to_string(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: usize,
    pub operative_times: Vec<usize>,
    pub indicators: Vec<Vec<u8>>,
    /// `charges[i][t]`: battery of node `i` at the end of slot `t`.
    pub charges: Vec<Vec<f64>>,
}

fn loads_for(n: usize, homes: &[usize], row: &[usize]) -> Vec<LoadState> {
    let mut loads = vec![LoadState::default(); n];
    for (j, &host) in row.iter().enumerate() {
        loads[host].hosted_count += 1;
        if homes[j] == host {
            loads[host].locally_initiated_count += 1;
        }
    }
    loads
}

fn advance(
    instance: &PlanInstance,
    slot: usize,
    charges: &[f64],
    loads: &[LoadState],
) -> (Vec<f64>, Vec<u8>) {
    let mut next = Vec::with_capacity(charges.len());
    let mut chis = Vec::with_capacity(charges.len());
    for (i, node) in instance.nodes.iter().enumerate() {
        let state = EnergyState {
            battery_charge: charges[i],
            ..node.energy()
        };
        let consumption = state.consumption(loads[i]).expect("local <= hosted by construction");
        let (after, chi) = model::step_battery(&state, node.solar[slot], consumption);
        next.push(after.battery_charge);
        chis.push(chi);
    }
    (next, chis)
}

/// Recomputes activity, operative times and the objective of a placement.
pub fn evaluate_plan(instance: &PlanInstance, plan: &PlacementPlan) -> Result<Evaluation, PlanError> {
    instance.validate()?;
    evaluate_assignment(instance, &plan.homes, &plan.assignment)
}

pub fn evaluate_assignment(
    instance: &PlanInstance,
    homes: &[usize],
    assignment: &[Vec<usize>],
) -> Result<Evaluation, PlanError> {
    let n = instance.nodes.len();
    let mismatch = |msg: String| Err(PlanError::DimensionMismatch(msg));
    if assignment.len() != instance.num_slots {
        return mismatch(format!(
            "plan has {} slots, instance has {}",
            assignment.len(),
            instance.num_slots
        ));
    }
    if homes.len() != instance.m || homes.iter().any(|&h| h >= n) {
        return mismatch(format!("homes {homes:?} do not fit m={} n={n}", instance.m));
    }
    for (t, row) in assignment.iter().enumerate() {
        if row.len() != instance.m || row.iter().any(|&h| h >= n) {
            return mismatch(format!("slot {t} assignment {row:?} does not fit m={} n={n}", instance.m));
        }
        let loads = loads_for(n, homes, row);
        if let Some(i) = loads
            .iter()
            .position(|l| l.hosted_count as usize > instance.max_per_node)
        {
            return Err(PlanError::Infeasible(format!(
                "slot {t}: node {} hosts more than {} microservices",
                instance.nodes[i].id, instance.max_per_node
            )));
        }
    }

    let mut charges: Vec<f64> = instance.nodes.iter().map(|n| n.initial_charge).collect();
    let mut indicators = vec![Vec::with_capacity(instance.num_slots); n];
    let mut history = vec![Vec::with_capacity(instance.num_slots); n];
    for (t, row) in assignment.iter().enumerate() {
        let loads = loads_for(n, homes, row);
        let (next, chis) = advance(instance, t, &charges, &loads);
        for i in 0..n {
            indicators[i].push(chis[i]);
            history[i].push(next[i]);
        }
        charges = next;
    }
    let operative_times: Vec<usize> = indicators.iter().map(|c| model::operative_time(c)).collect();
    let objective = operative_times.iter().copied().min().unwrap_or(0);
    Ok(Evaluation {
        objective,
        operative_times,
        indicators,
        charges: history,
    })
}

/// Builds a full plan (indicators and objective included) from raw placements.
pub fn plan_from_assignment(
    instance: &PlanInstance,
    homes: Vec<usize>,
    assignment: Vec<Vec<usize>>,
) -> Result<PlacementPlan, PlanError> {
    let eval = evaluate_assignment(instance, &homes, &assignment)?;
    Ok(PlacementPlan {
        node_ids: instance.nodes.iter().map(|n| n.id.clone()).collect(),
        homes,
        assignment,
        indicators: eval.indicators,
        operative_times: eval.operative_times,
        objective: eval.objective,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct StateKey {
    slot: usize,
    homes: Vec<usize>,
    charges: Vec<i64>,
    taus: Vec<usize>,
}

struct Search<'a> {
    instance: &'a PlanInstance,
    /// Node indices in ascending node-id order; enumeration follows it so
    /// ties resolve towards the lowest id.
    order: Vec<usize>,
    quantum: Vec<f64>,
    memo: HashMap<StateKey, (usize, Vec<usize>)>,
}

impl<'a> Search<'a> {
    fn new(instance: &'a PlanInstance) -> Self {
        let mut order: Vec<usize> = (0..instance.nodes.len()).collect();
        order.sort_by(|&a, &b| instance.nodes[a].id.cmp(&instance.nodes[b].id));
        let quantum = instance.nodes.iter().map(|n| 1e-9 * n.capacity).collect();
        Self {
            instance,
            order,
            quantum,
            memo: HashMap::new(),
        }
    }

    /// All placements of `m` microservices respecting the per-node limit, in
    /// lexicographic order of node rank. With `multiset` only non-decreasing
    /// rank vectors are produced (microservices are interchangeable before
    /// they have homes).
    fn placements(&self, multiset: bool) -> Vec<Vec<usize>> {
        let n = self.order.len();
        let m = self.instance.m;
        let mut out = Vec::new();
        let mut ranks = Vec::with_capacity(m);
        let mut counts = vec![0usize; n];
        self.extend(&mut ranks, &mut counts, multiset, &mut out);
        debug_assert!(out.iter().all(|p| p.len() == m));
        out
    }

    fn extend(
        &self,
        ranks: &mut Vec<usize>,
        counts: &mut [usize],
        multiset: bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if ranks.len() == self.instance.m {
            out.push(ranks.iter().map(|&r| self.order[r]).collect());
            return;
        }
        let start = if multiset {
            ranks.last().copied().unwrap_or(0)
        } else {
            0
        };
        for r in start..self.order.len() {
            if counts[r] == self.instance.max_per_node {
                continue;
            }
            counts[r] += 1;
            ranks.push(r);
            self.extend(ranks, counts, multiset, out);
            ranks.pop();
            counts[r] -= 1;
        }
    }

    fn key(&self, slot: usize, homes: &[usize], charges: &[f64], taus: &[usize]) -> StateKey {
        StateKey {
            slot,
            homes: homes.to_vec(),
            charges: charges
                .iter()
                .zip(&self.quantum)
                .map(|(c, q)| (c / q).round() as i64)
                .collect(),
            taus: taus.to_vec(),
        }
    }

    fn best(&mut self, slot: usize, homes: Option<&[usize]>, charges: &[f64], taus: &[usize]) -> usize {
        let horizon = self.instance.num_slots;
        if slot == horizon {
            return taus.iter().copied().min().unwrap_or(0);
        }
        let key = self.key(slot, homes.unwrap_or(&[]), charges, taus);
        if let Some((value, _)) = self.memo.get(&key) {
            return *value;
        }
        let ceiling = taus.iter().map(|t| t + horizon - slot).min().unwrap_or(0);
        let n = self.instance.nodes.len();

        let mut seen_loads = HashSet::new();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for row in self.placements(homes.is_none()) {
            let row_homes = homes.map(<[usize]>::to_vec).unwrap_or_else(|| row.clone());
            let loads = loads_for(n, &row_homes, &row);
            let signature: Vec<(u32, u32)> = loads
                .iter()
                .map(|l| (l.hosted_count, l.locally_initiated_count))
                .collect();
            // same loads and, before homes exist, same home multiset
            if homes.is_some() && !seen_loads.insert(signature) {
                continue;
            }
            let (next, chis) = advance(self.instance, slot, charges, &loads);
            let next_taus: Vec<usize> = taus.iter().zip(&chis).map(|(t, &c)| t + c as usize).collect();
            let value = self.best(slot + 1, Some(&row_homes), &next, &next_taus);
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, row));
            }
            if value == ceiling {
                break;
            }
        }
        let (value, row) = best.expect("at least one placement exists for feasible instances");
        self.memo.insert(key, (value, row));
        value
    }

    fn chosen(&self, slot: usize, homes: Option<&[usize]>, charges: &[f64], taus: &[usize]) -> Vec<usize> {
        let key = self.key(slot, homes.unwrap_or(&[]), charges, taus);
        self.memo[&key].1.clone()
    }
}

/// Finds a placement maximizing the minimum operative time.
pub fn solve_exact(instance: &PlanInstance) -> Result<PlacementPlan, PlanError> {
    let n = instance.nodes.len();
    if n > MAX_NODES || instance.num_slots > MAX_SLOTS || instance.m > MAX_MICROSERVICES {
        return Err(PlanError::SizeExceeded {
            nodes: n,
            slots: instance.num_slots,
            microservices: instance.m,
        });
    }
    instance.validate()?;
    if instance.m > n * instance.max_per_node {
        return Err(PlanError::Infeasible(format!(
            "{} microservices cannot be placed on {n} nodes hosting at most {} each",
            instance.m, instance.max_per_node
        )));
    }
    let fixed = instance.fixed_homes();

    let mut search = Search::new(instance);
    let mut charges: Vec<f64> = instance.nodes.iter().map(|n| n.initial_charge).collect();
    let mut taus = vec![0usize; n];
    search.best(0, fixed.as_deref(), &charges, &taus);

    let mut homes = fixed;
    let mut assignment = Vec::with_capacity(instance.num_slots);
    for slot in 0..instance.num_slots {
        let row = search.chosen(slot, homes.as_deref(), &charges, &taus);
        let row_homes = homes.clone().unwrap_or_else(|| row.clone());
        let loads = loads_for(n, &row_homes, &row);
        let (next, chis) = advance(instance, slot, &charges, &loads);
        for (t, c) in taus.iter_mut().zip(&chis) {
            *t += *c as usize;
        }
        charges = next;
        homes = Some(row_homes);
        assignment.push(row);
    }
    let plan = plan_from_assignment(instance, homes.unwrap_or_default(), assignment)?;
    debug_assert_eq!(plan.operative_times, taus);
    Ok(plan)
}
