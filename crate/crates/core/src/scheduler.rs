//! Per-egress-link packet selection.
//!
//! The drift-plus-penalty policy serves, in every slot, the flow maximising
//!
//! ```text
//! w_f * ( zeta_d * [ Omega_d(d) - Omega_d(d + 1 slot) ] + zeta_t * V_f )
//! ```
//!
//! where `d` is the head-of-queue delay, `Omega_d` the latency score over the
//! flow's per-hop bounds and `V_f` its throughput-deficit virtual queue.
//! FIFO and strict-priority policies are provided for comparison.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::TopologySnapshot;
use crate::qos::{map_score_unchecked, Orientation, ScoreBounds};
use crate::traffic::{AggregatedFlow, Bounds, TrafficClass, Zeta};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("flow {flow}: latency budget {budget} s does not exceed fixed route delay {fixed} s")]
    InfeasibleBudget { flow: usize, budget: f64, fixed: f64 },
    #[error("flow {0}: empty route")]
    EmptyRoute(usize),
    #[error("unknown scheduling policy {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Lyapunov,
    Fifo,
    StrictPriority,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Lyapunov => "lyapunov",
            Policy::Fifo => "fifo",
            Policy::StrictPriority => "strict_priority",
        })
    }
}

impl FromStr for Policy {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lyapunov" => Ok(Policy::Lyapunov),
            "fifo" => Ok(Policy::Fifo),
            "strict_priority" => Ok(Policy::StrictPriority),
            other => Err(SchedulerError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Per-hop queuing-delay bounds of one flow on one link, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerHopBounds {
    pub flow_id: usize,
    pub link: usize,
    pub delta_min_hop: f64,
    pub delta_max_hop: f64,
}

/// Utilisation of every edge: allocated load over capacity.
pub fn link_utilization(routes: &[&[usize]], bandwidths: &[f64], snapshot: &TopologySnapshot) -> Vec<f64> {
    let mut load = vec![0.0; snapshot.edges.len()];
    for (route, b) in routes.iter().zip(bandwidths) {
        for &e in route.iter() {
            load[e] += b;
        }
    }
    load.iter().map(|l| l / snapshot.link_capacity).collect()
}

/// Splits the end-to-end latency budget left after propagation and
/// transmission evenly over the hops, then scales each hop by its congestion
/// factor (link utilisation over the route's mean utilisation).
pub fn compute_per_hop_bounds(
    flow_id: usize,
    latency: Bounds,
    route: &[usize],
    utilization: &[f64],
    snapshot: &TopologySnapshot,
    slot_seconds: f64,
) -> Result<Vec<PerHopBounds>, SchedulerError> {
    if route.is_empty() {
        return Err(SchedulerError::EmptyRoute(flow_id));
    }
    let hops = route.len() as f64;
    let fixed: f64 = route
        .iter()
        .map(|&e| snapshot.edges[e].propagation_delay + slot_seconds)
        .sum();
    if latency.max <= fixed {
        return Err(SchedulerError::InfeasibleBudget {
            flow: flow_id,
            budget: latency.max,
            fixed,
        });
    }
    let mean_util = route.iter().map(|&e| utilization[e]).sum::<f64>() / hops;
    let per_hop_max = (latency.max - fixed) / hops;
    let per_hop_min = (latency.min - fixed) / hops;
    Ok(route
        .iter()
        .map(|&e| {
            let factor = if mean_util > 0.0 {
                utilization[e] / mean_util
            } else {
                1.0
            };
            PerHopBounds {
                flow_id,
                link: e,
                delta_min_hop: (per_hop_min * factor).max(0.0),
                delta_max_hop: per_hop_max * factor,
            }
        })
        .collect())
}

/// Bounds for a flow given in terms of its aggregated-flow record.
pub fn per_hop_bounds_for(
    flow: &AggregatedFlow,
    route: &[usize],
    utilization: &[f64],
    snapshot: &TopologySnapshot,
    slot_seconds: f64,
) -> Result<Vec<PerHopBounds>, SchedulerError> {
    compute_per_hop_bounds(
        flow.id,
        flow.profile.latency,
        route,
        utilization,
        snapshot,
        slot_seconds,
    )
}

/// `max(V + B - s, 0)`.
#[inline]
pub fn update_virtual_queue(v: f64, bandwidth: f64, served: bool) -> f64 {
    (v + bandwidth - if served { 1.0 } else { 0.0 }).max(0.0)
}

/// Per-hop latency score of a head-of-queue delay given in slots.
#[inline]
pub fn hop_latency_score(delay_slots: f64, bounds: &PerHopBounds, slot_seconds: f64, score: &ScoreBounds) -> f64 {
    let d = delay_slots * slot_seconds;
    if bounds.delta_max_hop <= bounds.delta_min_hop {
        // Degenerate interval: step at the upper bound.
        return if d < bounds.delta_max_hop {
            score.omega_max
        } else {
            score.omega_min
        };
    }
    map_score_unchecked(
        d,
        bounds.delta_min_hop,
        bounds.delta_max_hop,
        Orientation::LowerIsBetter,
        score,
    )
}

/// Argument of the drift-plus-penalty argmax for one flow. Without per-hop
/// bounds (infeasible latency budget) the delay term is zero.
#[inline]
pub fn marginal_gain(
    weight: f64,
    zeta: &Zeta,
    hoq_delay_slots: u64,
    virtual_queue: f64,
    bounds: Option<&PerHopBounds>,
    slot_seconds: f64,
    score: &ScoreBounds,
) -> f64 {
    let delay_term = match bounds {
        Some(b) => {
            let d = hoq_delay_slots as f64;
            hop_latency_score(d, b, slot_seconds, score) - hop_latency_score(d + 1.0, b, slot_seconds, score)
        }
        None => 0.0,
    };
    weight * (zeta.latency * delay_term + zeta.throughput * virtual_queue)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPacket<P> {
    pub packet: P,
    pub enqueue_slot: u64,
    /// Link-local arrival order.
    pub seq: u64,
}

/// One flow's queue and virtual queue on a link.
#[derive(Debug, Clone)]
pub struct FlowQueue<P> {
    pub flow: usize,
    pub weight: f64,
    pub zeta: Zeta,
    pub class: TrafficClass,
    pub bandwidth: f64,
    pub bounds: Option<PerHopBounds>,
    pub virtual_queue: f64,
    pub queue: VecDeque<QueuedPacket<P>>,
}

impl<P> FlowQueue<P> {
    pub fn new(
        flow: usize,
        weight: f64,
        zeta: Zeta,
        class: TrafficClass,
        bandwidth: f64,
        bounds: Option<PerHopBounds>,
    ) -> Self {
        Self {
            flow,
            weight,
            zeta,
            class,
            bandwidth,
            bounds,
            virtual_queue: 0.0,
            queue: VecDeque::new(),
        }
    }

    pub fn hoq_delay(&self, now: u64) -> Option<u64> {
        self.queue.front().map(|p| now.saturating_sub(p.enqueue_slot))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub slot_seconds: f64,
    pub score: ScoreBounds,
}

/// Queues of one outbound ISL sharing a buffer of `capacity` packets.
#[derive(Debug, Clone)]
pub struct EgressState<P> {
    pub flows: Vec<FlowQueue<P>>,
    pub capacity: usize,
    params: ScheduleParams,
    occupancy: usize,
    rr_next: usize,
    seq: u64,
}

impl<P> EgressState<P> {
    pub fn new(capacity: usize, params: ScheduleParams) -> Self {
        Self {
            flows: Vec::new(),
            capacity,
            params,
            occupancy: 0,
            rr_next: 0,
            seq: 0,
        }
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn position(&self, flow: usize) -> Option<usize> {
        self.flows.iter().position(|f| f.flow == flow)
    }

    /// Adds a flow queue and returns its position.
    pub fn add_flow(&mut self, queue: FlowQueue<P>) -> usize {
        self.occupancy += queue.queue.len();
        self.flows.push(queue);
        self.flows.len() - 1
    }

    pub fn enqueue(&mut self, pos: usize, packet: P, now: u64) {
        let seq = self.seq;
        self.seq += 1;
        self.flows[pos].queue.push_back(QueuedPacket {
            packet,
            enqueue_slot: now,
            seq,
        });
        self.occupancy += 1;
    }

    /// Gain of the flow at `pos`, or `None` if its queue is empty.
    pub fn gain(&self, pos: usize, now: u64) -> Option<f64> {
        let f = &self.flows[pos];
        let delay = f.hoq_delay(now)?;
        Some(marginal_gain(
            f.weight,
            &f.zeta,
            delay,
            f.virtual_queue,
            f.bounds.as_ref(),
            self.params.slot_seconds,
            &self.params.score,
        ))
    }

    /// Position of the flow the policy would serve at `now`.
    pub fn select(&self, now: u64, policy: Policy) -> Option<usize> {
        match policy {
            Policy::Lyapunov => {
                let mut best: Option<(usize, f64)> = None;
                for pos in 0..self.flows.len() {
                    let Some(g) = self.gain(pos, now) else { continue };
                    let better = match best {
                        None => true,
                        Some((b, bg)) => {
                            let (cur, inc) = (&self.flows[pos], &self.flows[b]);
                            g > bg
                                || (g == bg
                                    && (cur.weight > inc.weight || (cur.weight == inc.weight && cur.flow < inc.flow)))
                        }
                    };
                    if better {
                        best = Some((pos, g));
                    }
                }
                best.map(|(p, _)| p)
            }
            Policy::Fifo => self.min_by_key(|f| f.queue.front().map(|p| (p.enqueue_slot, p.seq))),
            Policy::StrictPriority => self.min_by_key(|f| f.queue.front().map(|p| (f.class, p.enqueue_slot, p.seq))),
        }
    }

    fn min_by_key<K: Ord>(&self, key: impl Fn(&FlowQueue<P>) -> Option<K>) -> Option<usize> {
        self.flows
            .iter()
            .enumerate()
            .filter_map(|(i, f)| key(f).map(|k| (k, i)))
            .min_by(|a, b| a.0.cmp(&b.0))
            .map(|(_, i)| i)
    }

    /// Serves at most one head-of-queue packet, then updates every virtual
    /// queue on the link with the realised schedule.
    pub fn schedule_slot(&mut self, now: u64, policy: Policy) -> Option<(usize, QueuedPacket<P>)> {
        let chosen = self.select(now, policy);
        for (pos, f) in self.flows.iter_mut().enumerate() {
            f.virtual_queue = update_virtual_queue(f.virtual_queue, f.bandwidth, chosen == Some(pos));
        }
        let pos = chosen?;
        let pkt = self.flows[pos].queue.pop_front().expect("selected queue is nonempty");
        self.occupancy -= 1;
        Some((self.flows[pos].flow, pkt))
    }

    /// Drops tail packets round-robin across flows until the buffer fits.
    pub fn drop_overflow(&mut self) -> Vec<(usize, QueuedPacket<P>)> {
        let mut dropped = Vec::new();
        let n = self.flows.len();
        while self.occupancy > self.capacity && n > 0 {
            let start = self.rr_next % n;
            let Some(pos) = (0..n)
                .map(|k| (start + k) % n)
                .find(|&p| !self.flows[p].queue.is_empty())
            else {
                break;
            };
            let pkt = self.flows[pos].queue.pop_back().expect("nonempty");
            self.occupancy -= 1;
            self.rr_next = (pos + 1) % n;
            dropped.push((self.flows[pos].flow, pkt));
        }
        dropped
    }
}
