//! Sequential modified-cost shortest-path allocation.

use super::routing::shortest_path;
use super::{AllocError, Scenario};
use crate::simulator::{AllocationConfig, FlowAllocation};

/// Allocates flows one at a time, EF before AF before BE and by id within a
/// class. Each flow takes the cheapest path under
/// `delay_e + kappa * (1 - residual_e / R)`, where `kappa` grows as the
/// flow's latency preference shrinks, then the largest grid bandwidth that
/// fits the path's residual capacity (the smallest grid value otherwise).
/// Residual capacity is updated before the next flow.
pub fn baseline_sequential(scenario: &Scenario) -> Result<AllocationConfig, AllocError> {
    let snap = &scenario.snapshot;
    let slot = scenario.sim.slot_seconds;
    let cap = snap.link_capacity;
    let n = snap.node_count();
    let m = snap.edges.len();
    let no_nodes = vec![false; n];
    let no_edges = vec![false; m];

    let delay: Vec<f64> = snap.edges.iter().map(|e| e.propagation_delay + slot).collect();
    let d_ref = if m > 0 {
        delay.iter().sum::<f64>() / m as f64
    } else {
        slot
    };

    let mut order: Vec<usize> = (0..scenario.flows.len()).collect();
    order.sort_by_key(|&i| (scenario.flows[i].class(), scenario.flows[i].id));

    let mut residual = vec![cap; m];
    let mut out: Vec<Option<FlowAllocation>> = vec![None; scenario.flows.len()];
    for i in order {
        let flow = &scenario.flows[i];
        let zd = flow.zeta().latency;
        let kappa = (1.0 - zd) / zd.max(1e-3) * d_ref;
        let cost = |e: usize| delay[e] + kappa * (1.0 - residual[e].max(0.0) / cap);
        let path = shortest_path(snap, flow.source, flow.dest, &cost, &no_nodes, &no_edges)
            .filter(|p| !p.edges.is_empty())
            .ok_or(AllocError::NoRoute {
                flow: flow.id,
                src: flow.source,
                dest: flow.dest,
            })?;
        let room = path.edges.iter().map(|&e| residual[e]).fold(f64::INFINITY, f64::min);
        let grid = &scenario.grids[i].values;
        let bandwidth = grid
            .iter()
            .rev()
            .find(|&&v| v <= room + 1e-12)
            .copied()
            .unwrap_or(grid[0]);
        for &e in &path.edges {
            residual[e] -= bandwidth;
        }
        out[i] = Some(FlowAllocation {
            route: path.edges,
            bandwidth,
        });
    }
    Ok(AllocationConfig {
        flows: out.into_iter().map(|a| a.expect("every flow allocated")).collect(),
    })
}
