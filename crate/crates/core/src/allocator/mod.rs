//! Joint route and bandwidth allocation.
//!
//! Candidate routes come from a k-shortest-paths search over propagation plus
//! transmission delay; bandwidths from a uniform grid over each flow's
//! throughput bounds. [`train`] searches the product space with an
//! epsilon-greedy tree search whose leaves are scored by simulating one
//! window under the configured scheduler. [`baseline_sequential`] is the
//! one-flow-at-a-time comparison scheme.

mod baseline;
mod mcts;
pub mod routing;

pub use baseline::baseline_sequential;
pub use mcts::{backpropagate, train, train_from, Episode, MctsNode, MctsTree, TraceRow, TrainingResult};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::TopologySnapshot;
use crate::qos::{weighted_objective, QosError};
use crate::scheduler::Policy;
use crate::simulator::{run_window, AllocationConfig, FlowAllocation, SimError, SimSettings};
use crate::traffic::AggregatedFlow;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("flow {flow}: no route from {src} to {dest}")]
    NoRoute { flow: usize, src: usize, dest: usize },
    #[error("bandwidth grid needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Qos(#[from] QosError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteCandidate {
    pub flow_id: usize,
    pub edges: Vec<usize>,
    pub nodes: Vec<usize>,
    pub hop_count: usize,
    /// Seconds.
    pub total_prop_delay: f64,
}

/// Per-edge cost used to rank routes: propagation plus one slot of
/// transmission.
pub fn delay_cost(snapshot: &TopologySnapshot, slot_seconds: f64) -> impl Fn(usize) -> f64 + '_ {
    move |e| snapshot.edges[e].propagation_delay + slot_seconds
}

pub fn enumerate_routes(
    flow: &AggregatedFlow,
    snapshot: &TopologySnapshot,
    k: usize,
    slot_seconds: f64,
) -> Result<Vec<RouteCandidate>, AllocError> {
    let no_route = || AllocError::NoRoute {
        flow: flow.id,
        src: flow.source,
        dest: flow.dest,
    };
    let n = snapshot.node_count();
    if flow.source == flow.dest || flow.source >= n || flow.dest >= n {
        return Err(no_route());
    }
    let cost = delay_cost(snapshot, slot_seconds);
    let paths = routing::k_shortest_paths(snapshot, flow.source, flow.dest, k, &cost);
    if paths.is_empty() {
        return Err(no_route());
    }
    Ok(paths
        .into_iter()
        .map(|p| RouteCandidate {
            flow_id: flow.id,
            hop_count: p.edges.len(),
            total_prop_delay: p.edges.iter().map(|&e| snapshot.edges[e].propagation_delay).sum(),
            nodes: p.nodes,
            edges: p.edges,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthGrid {
    pub flow_id: usize,
    /// Packets per slot, ascending.
    pub values: Vec<f64>,
}

/// `levels` values evenly spaced over the flow's throughput bounds, both
/// endpoints included.
pub fn bandwidth_grid(flow: &AggregatedFlow, levels: usize) -> Result<BandwidthGrid, AllocError> {
    if levels < 2 {
        return Err(AllocError::TooFewLevels(levels));
    }
    let b = flow.throughput_bounds();
    let step = (b.max - b.min) / (levels - 1) as f64;
    let mut values: Vec<f64> = (0..levels).map(|i| b.min + i as f64 * step).collect();
    values[levels - 1] = b.max;
    Ok(BandwidthGrid {
        flow_id: flow.id,
        values,
    })
}

/// Total relative overload: sum over edges of `max(0, load - R) / R`.
pub fn capacity_cost(config: &AllocationConfig, snapshot: &TopologySnapshot) -> f64 {
    let mut load = vec![0.0; snapshot.edges.len()];
    for f in &config.flows {
        for &e in &f.route {
            load[e] += f.bandwidth;
        }
    }
    let cap = snapshot.link_capacity;
    load.iter().map(|l| (l - cap).max(0.0) / cap).sum()
}

/// `objective - lambda * cost`.
pub fn reward_value(objective: f64, cost: f64, lambda: f64) -> f64 {
    objective - lambda * cost
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub objective: f64,
    pub constraint_violation: f64,
    pub reward: f64,
}

/// Index of a route candidate and a bandwidth level for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Choice {
    pub route: u16,
    pub bandwidth: u16,
}

/// Everything needed to score an allocation on one snapshot.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub snapshot: TopologySnapshot,
    pub flows: Vec<AggregatedFlow>,
    pub candidates: Vec<Vec<RouteCandidate>>,
    pub grids: Vec<BandwidthGrid>,
    pub sim: SimSettings,
    /// Arrival seed held fixed for every reward evaluation.
    pub arrival_seed: u64,
}

impl Scenario {
    /// Flows must be numbered by position (`flows[i].id == i`).
    pub fn build(
        snapshot: TopologySnapshot,
        flows: Vec<AggregatedFlow>,
        k_routes: usize,
        bandwidth_levels: usize,
        sim: SimSettings,
        arrival_seed: u64,
    ) -> Result<Self, AllocError> {
        if k_routes == 0 {
            return Err(AllocError::InvalidParams("k_routes must be >= 1".into()));
        }
        if let Some((i, f)) = flows.iter().enumerate().find(|(i, f)| f.id != *i) {
            return Err(AllocError::InvalidParams(format!(
                "flow at position {i} has id {}",
                f.id
            )));
        }
        let candidates = flows
            .iter()
            .map(|f| enumerate_routes(f, &snapshot, k_routes, sim.slot_seconds))
            .collect::<Result<Vec<_>, _>>()?;
        let grids = flows
            .iter()
            .map(|f| bandwidth_grid(f, bandwidth_levels))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            snapshot,
            flows,
            candidates,
            grids,
            sim,
            arrival_seed,
        })
    }

    /// `(route count, bandwidth count)` per flow.
    pub fn action_space(&self, flow: usize) -> (usize, usize) {
        (self.candidates[flow].len(), self.grids[flow].values.len())
    }

    /// Number of complete configurations.
    pub fn leaf_count(&self) -> f64 {
        (0..self.flows.len())
            .map(|f| {
                let (r, b) = self.action_space(f);
                (r * b) as f64
            })
            .product()
    }

    pub fn resolve(&self, choices: &[Choice]) -> AllocationConfig {
        AllocationConfig {
            flows: choices
                .iter()
                .enumerate()
                .map(|(f, c)| FlowAllocation {
                    route: self.candidates[f][c.route as usize].edges.clone(),
                    bandwidth: self.grids[f].values[c.bandwidth as usize],
                })
                .collect(),
        }
    }

    /// Simulates one window and scores it.
    pub fn evaluate(
        &self,
        config: &AllocationConfig,
        policy: Policy,
        lambda: f64,
    ) -> Result<RewardBreakdown, AllocError> {
        reward(config, self, policy, lambda)
    }
}

/// Objective from one simulated window minus the weighted capacity overload.
pub fn reward(
    config: &AllocationConfig,
    scenario: &Scenario,
    policy: Policy,
    lambda: f64,
) -> Result<RewardBreakdown, AllocError> {
    let (metrics, _) = run_window(
        &scenario.snapshot,
        &scenario.flows,
        config,
        policy,
        scenario.sim,
        scenario.arrival_seed,
    )?;
    let scores: Vec<f64> = metrics
        .scores(&scenario.flows, &scenario.sim.score)
        .iter()
        .map(|s| s.total)
        .collect();
    let weights: Vec<f64> = scenario.flows.iter().map(|f| f.weight).collect();
    let objective = weighted_objective(&weights, &scores, &scenario.sim.score)?;
    let cost = capacity_cost(config, &scenario.snapshot);
    Ok(RewardBreakdown {
        objective,
        constraint_violation: cost,
        reward: reward_value(objective, cost, lambda),
    })
}

/// Level order of flows in the search tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowOrder {
    /// Heaviest SLA weight first, ties by flow id.
    #[default]
    WeightDescending,
    ById,
}

impl FlowOrder {
    pub fn order(&self, flows: &[AggregatedFlow]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..flows.len()).collect();
        if *self == FlowOrder::WeightDescending {
            idx.sort_by(|&a, &b| {
                flows[b]
                    .weight
                    .partial_cmp(&flows[a].weight)
                    .unwrap_or(Ordering::Equal)
                    .then(flows[a].id.cmp(&flows[b].id))
            });
        }
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsParams {
    pub epsilon_0: f64,
    pub a_0: f64,
    pub b_0: f64,
    pub epsilon_min: f64,
    pub lambda: f64,
    pub episodes: usize,
    pub flow_order: FlowOrder,
    /// Scheduler used inside reward simulations.
    pub policy: Policy,
    pub seed: u64,
}

impl Default for MctsParams {
    fn default() -> Self {
        Self {
            epsilon_0: 0.5,
            a_0: 100.0,
            b_0: 10.0,
            epsilon_min: 0.05,
            lambda: 1.0,
            episodes: 3000,
            flow_order: FlowOrder::WeightDescending,
            policy: Policy::Lyapunov,
            seed: 0,
        }
    }
}

impl MctsParams {
    pub fn validate(&self) -> Result<(), AllocError> {
        let bad = |m: &str| Err(AllocError::InvalidParams(m.to_string()));
        if !(self.epsilon_0 > 0.0 && self.epsilon_0 <= 1.0) {
            return bad("epsilon_0 must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.epsilon_min) {
            return bad("epsilon_min must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if self.episodes == 0 {
            return bad("episodes must be >= 1");
        }
        if !(self.a_0 > 0.0) {
            return bad("a_0 must be positive");
        }
        Ok(())
    }
}

/// Exploration rate at episode `z`: `max(1 - epsilon_0 * log10(z / a_0 + b_0), epsilon_min)`.
pub fn epsilon_schedule(z: usize, params: &MctsParams) -> Result<f64, AllocError> {
    let arg = z as f64 / params.a_0 + params.b_0;
    if !(arg > 0.0) {
        return Err(AllocError::InvalidParams(format!(
            "epsilon schedule undefined: z/a_0 + b_0 = {arg}"
        )));
    }
    Ok((1.0 - params.epsilon_0 * arg.log10()).max(params.epsilon_min))
}
