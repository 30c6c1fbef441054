//! Discrete-time slot engine.
//!
//! Every slot runs, in order: Poisson arrivals at the sources, deliveries of
//! packets whose propagation timer expired (forwarded or recorded), one
//! scheduling decision per egress link, round-robin overflow drops, and the
//! virtual-queue updates (done inside [`EgressState::schedule_slot`]).
//!
//! Propagation delays are rounded up to whole slots. A packet sent at slot
//! `t` over a link with `p` propagation slots reaches the far end at
//! `t + 1 + p`.

mod scenario;

pub use scenario::{
    evaluate_plan, plan_allocations, run_scenario, PolicyRun, RunPolicy, ScenarioResult, ScenarioSpec, SnapshotRun,
    WindowRecord,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::TopologySnapshot;
use crate::qos::{FlowWindow, ScoreBounds, WindowMetrics};
use crate::scheduler::{
    link_utilization, per_hop_bounds_for, EgressState, FlowQueue, PerHopBounds, Policy, ScheduleParams,
};
use crate::seed::substream;
use crate::traffic::{AggregatedFlow, ArrivalProcess, TrafficClass, Zeta};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("allocation covers {got} flows, expected {expected}")]
    AllocationMismatch { expected: usize, got: usize },
    #[error("flow {flow}: route is not a path from {src} to {dest}")]
    BadRoute { flow: usize, src: usize, dest: usize },
    #[error("window must span more than one slot, got {0}")]
    WindowTooShort(u64),
}

/// Engine settings shared by every window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub window_slots: u64,
    pub slot_seconds: f64,
    pub buffer_packets: usize,
    pub score: ScoreBounds,
    /// Re-check packet conservation and link capacity after every slot.
    pub audit: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            window_slots: 10_000,
            slot_seconds: 1e-4,
            buffer_packets: 1024,
            score: ScoreBounds::default(),
            audit: false,
        }
    }
}

/// Route (edge indices) and bandwidth of one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAllocation {
    pub route: Vec<usize>,
    /// Packets per slot.
    pub bandwidth: f64,
}

/// Committed allocation for every flow, in flow order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllocationConfig {
    pub flows: Vec<FlowAllocation>,
}

impl AllocationConfig {
    pub fn routes(&self) -> Vec<&[usize]> {
        self.flows.iter().map(|f| f.route.as_slice()).collect()
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.bandwidth).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub flow: u32,
    pub route: u32,
    /// Index of the link the packet is queued on or travelling over.
    pub hop: u16,
    pub generation_slot: u64,
}

impl Packet {
    pub fn hops_remaining(&self, route_len: usize) -> usize {
        route_len - self.hop as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub latency_slots: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub slots_checked: u64,
    pub conservation_violations: u64,
    pub capacity_violations: u64,
    pub causality_violations: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.conservation_violations == 0 && self.capacity_violations == 0 && self.causality_violations == 0
    }
}

#[derive(Debug, Clone)]
struct FlowRuntime {
    arrivals: ArrivalProcess,
    route: u32,
    first_link: usize,
    meta: (f64, Zeta, TrafficClass),
    total: FlowCounters,
    window: FlowCounters,
}

/// Full network state between slots.
#[derive(Debug, Clone)]
pub struct Engine {
    settings: SimSettings,
    policy: Policy,
    slot: u64,
    window_start: u64,
    routes: Vec<Vec<usize>>,
    flows: Vec<FlowRuntime>,
    links: Vec<EgressState<Packet>>,
    transit: Vec<VecDeque<(u64, Packet)>>,
    prop_slots: Vec<u64>,
    audit: AuditReport,
    transmissions: Vec<u8>,
}

fn check_route(snapshot: &TopologySnapshot, flow: &AggregatedFlow, route: &[usize]) -> Result<(), SimError> {
    let bad = || SimError::BadRoute {
        flow: flow.id,
        src: flow.source,
        dest: flow.dest,
    };
    let mut at = flow.source;
    if route.is_empty() {
        return Err(bad());
    }
    for &e in route {
        let edge = snapshot.edges.get(e).ok_or_else(bad)?;
        if edge.from != at {
            return Err(bad());
        }
        at = edge.to;
    }
    if at != flow.dest {
        return Err(bad());
    }
    Ok(())
}

impl Engine {
    /// Empty network carrying `allocation`. Flow `i`'s arrival stream depends
    /// only on `(seed, flow id)`.
    pub fn new(
        snapshot: &TopologySnapshot,
        flows: &[AggregatedFlow],
        allocation: &AllocationConfig,
        policy: Policy,
        settings: SimSettings,
        seed: u64,
    ) -> Result<Self, SimError> {
        let params = ScheduleParams {
            slot_seconds: settings.slot_seconds,
            score: settings.score,
        };
        let mut engine = Self {
            settings,
            policy,
            slot: 0,
            window_start: 0,
            routes: Vec::new(),
            flows: flows
                .iter()
                .map(|f| FlowRuntime {
                    arrivals: ArrivalProcess::new(0.0, arrival_seed(seed, f.id)),
                    route: 0,
                    first_link: 0,
                    meta: (f.weight, f.zeta(), f.class()),
                    total: FlowCounters::default(),
                    window: FlowCounters::default(),
                })
                .collect(),
            links: (0..snapshot.edges.len())
                .map(|_| EgressState::new(settings.buffer_packets, params))
                .collect(),
            transit: vec![VecDeque::new(); snapshot.edges.len()],
            prop_slots: vec![0; snapshot.edges.len()],
            audit: AuditReport::default(),
            transmissions: vec![0; snapshot.edges.len()],
        };
        engine.install(snapshot, flows, allocation, seed)?;
        Ok(engine)
    }

    /// Applies a (new) snapshot and allocation. Queues, virtual queues and
    /// packets in flight carry over by region; packets already queued keep
    /// the route they were sent on.
    pub fn install(
        &mut self,
        snapshot: &TopologySnapshot,
        flows: &[AggregatedFlow],
        allocation: &AllocationConfig,
        seed: u64,
    ) -> Result<(), SimError> {
        if allocation.flows.len() != flows.len() || flows.len() != self.flows.len() {
            return Err(SimError::AllocationMismatch {
                expected: flows.len(),
                got: allocation.flows.len(),
            });
        }
        for (f, a) in flows.iter().zip(&allocation.flows) {
            check_route(snapshot, f, &a.route)?;
        }
        let slot_s = self.settings.slot_seconds;
        for (l, e) in snapshot.edges.iter().enumerate() {
            self.prop_slots[l] = (e.propagation_delay / slot_s - 1e-9).ceil().max(0.0) as u64;
        }
        let util = link_utilization(&allocation.routes(), &allocation.bandwidths(), snapshot);

        for link in &mut self.links {
            for q in &mut link.flows {
                q.bandwidth = 0.0;
                q.bounds = None;
            }
        }
        for (i, (f, a)) in flows.iter().zip(&allocation.flows).enumerate() {
            let bounds: Option<Vec<PerHopBounds>> = per_hop_bounds_for(f, &a.route, &util, snapshot, slot_s).ok();
            for (h, &l) in a.route.iter().enumerate() {
                let link = &mut self.links[l];
                let pos = match link.position(i) {
                    Some(p) => p,
                    None => link.add_flow(FlowQueue::new(i, f.weight, f.zeta(), f.class(), 0.0, None)),
                };
                let q = &mut link.flows[pos];
                q.weight = f.weight;
                q.zeta = f.zeta();
                q.class = f.class();
                q.bandwidth = a.bandwidth;
                q.bounds = bounds.as_ref().map(|b| b[h]);
            }
            let rt = &mut self.flows[i];
            if rt.arrivals.mean_rate() != a.bandwidth {
                rt.arrivals = ArrivalProcess::new(a.bandwidth, arrival_seed(seed, f.id));
            }
            rt.meta = (f.weight, f.zeta(), f.class());
            self.routes.push(a.route.clone());
            rt.route = (self.routes.len() - 1) as u32;
            rt.first_link = a.route[0];
        }
        Ok(())
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: Policy) {
        self.policy = policy;
    }

    pub fn audit(&self) -> &AuditReport {
        &self.audit
    }

    pub fn totals(&self, flow: usize) -> &FlowCounters {
        &self.flows[flow].total
    }

    pub fn link(&self, l: usize) -> &EgressState<Packet> {
        &self.links[l]
    }

    /// Packets of `flow` queued or propagating anywhere in the network.
    pub fn in_flight(&self, flow: usize) -> u64 {
        let queued: usize = self
            .links
            .iter()
            .filter_map(|l| l.position(flow).map(|p| l.flows[p].queue.len()))
            .sum();
        let moving: usize = self
            .transit
            .iter()
            .map(|t| t.iter().filter(|(_, p)| p.flow as usize == flow).count())
            .sum();
        (queued + moving) as u64
    }

    fn enqueue_at(&mut self, link: usize, packet: Packet) {
        let flow = packet.flow as usize;
        let now = self.slot;
        let (weight, zeta, class) = self.flows[flow].meta;
        let state = &mut self.links[link];
        let pos = match state.position(flow) {
            Some(p) => p,
            None => state.add_flow(FlowQueue::new(flow, weight, zeta, class, 0.0, None)),
        };
        state.enqueue(pos, packet, now);
    }

    /// Advances the network by one slot.
    pub fn step(&mut self) {
        let now = self.slot;

        for i in 0..self.flows.len() {
            let n = self.flows[i].arrivals.sample(now);
            if n == 0 {
                continue;
            }
            let rt = &mut self.flows[i];
            rt.total.generated += n as u64;
            rt.window.generated += n as u64;
            let packet = Packet {
                flow: i as u32,
                route: rt.route,
                hop: 0,
                generation_slot: now,
            };
            let link = rt.first_link;
            for _ in 0..n {
                self.enqueue_at(link, packet);
            }
        }

        for l in 0..self.transit.len() {
            while self.transit[l].front().is_some_and(|(t, _)| *t <= now) {
                let (_, mut p) = self.transit[l].pop_front().expect("front checked");
                p.hop += 1;
                let route_len = self.routes[p.route as usize].len();
                if p.hop as usize == route_len {
                    let latency = now - p.generation_slot;
                    if self.settings.audit && latency < route_len as u64 {
                        self.audit.causality_violations += 1;
                    }
                    let rt = &mut self.flows[p.flow as usize];
                    rt.total.delivered += 1;
                    rt.total.latency_slots += latency;
                    rt.window.delivered += 1;
                    rt.window.latency_slots += latency;
                } else {
                    let next = self.routes[p.route as usize][p.hop as usize];
                    self.enqueue_at(next, p);
                }
            }
        }

        for l in 0..self.links.len() {
            self.transmissions[l] = 0;
            if let Some((_, q)) = self.links[l].schedule_slot(now, self.policy) {
                self.transmissions[l] += 1;
                let arrive = now + 1 + self.prop_slots[l];
                let t = &mut self.transit[l];
                if t.back().is_none_or(|(b, _)| *b <= arrive) {
                    t.push_back((arrive, q.packet));
                } else {
                    let at = t.partition_point(|(b, _)| *b <= arrive);
                    t.insert(at, (arrive, q.packet));
                }
            }
        }

        for l in 0..self.links.len() {
            if self.links[l].occupancy() <= self.links[l].capacity {
                continue;
            }
            for (flow, _) in self.links[l].drop_overflow() {
                let rt = &mut self.flows[flow];
                rt.total.dropped += 1;
                rt.window.dropped += 1;
            }
        }

        if self.settings.audit {
            self.run_audit();
        }
        self.slot += 1;
    }

    fn run_audit(&mut self) {
        self.audit.slots_checked += 1;
        if self.transmissions.iter().any(|&t| t > 1) {
            self.audit.capacity_violations += 1;
        }
        let mut in_flight = vec![0u64; self.flows.len()];
        for link in &self.links {
            for q in &link.flows {
                in_flight[q.flow] += q.queue.len() as u64;
            }
        }
        for t in &self.transit {
            for (_, p) in t {
                in_flight[p.flow as usize] += 1;
            }
        }
        for (rt, fl) in self.flows.iter().zip(in_flight) {
            if rt.total.generated != rt.total.delivered + rt.total.dropped + fl {
                self.audit.conservation_violations += 1;
            }
        }
    }

    pub fn begin_window(&mut self) {
        self.window_start = self.slot;
        for rt in &mut self.flows {
            rt.window = FlowCounters::default();
        }
    }

    /// Metrics accumulated since the last `begin_window`.
    pub fn window_metrics(&self) -> WindowMetrics {
        let z = self.slot - self.window_start;
        let slot_s = self.settings.slot_seconds;
        WindowMetrics {
            window_slots: z,
            slot_seconds: slot_s,
            flows: self
                .flows
                .iter()
                .enumerate()
                .map(|(i, rt)| {
                    let w = &rt.window;
                    FlowWindow {
                        flow_id: i,
                        generated: w.generated,
                        delivered: w.delivered,
                        dropped: w.dropped,
                        avg_latency: (w.delivered > 0).then(|| w.latency_slots as f64 / w.delivered as f64 * slot_s),
                        throughput: if z > 0 { w.delivered as f64 / z as f64 } else { 0.0 },
                        drop_rate: if w.generated > 0 {
                            w.dropped as f64 / w.generated as f64
                        } else {
                            0.0
                        },
                    }
                })
                .collect(),
        }
    }

    /// Runs `slots` slots as one measurement window.
    pub fn run_window(&mut self, slots: u64) -> WindowMetrics {
        self.begin_window();
        for _ in 0..slots {
            self.step();
        }
        self.window_metrics()
    }
}

pub fn arrival_seed(seed: u64, flow_id: usize) -> u64 {
    substream(seed, "arrivals", &[flow_id as u64])
}

/// Runs one window of `settings.window_slots` slots on an empty network.
pub fn run_window(
    snapshot: &TopologySnapshot,
    flows: &[AggregatedFlow],
    allocation: &AllocationConfig,
    policy: Policy,
    settings: SimSettings,
    seed: u64,
) -> Result<(WindowMetrics, AuditReport), SimError> {
    if settings.window_slots <= 1 {
        return Err(SimError::WindowTooShort(settings.window_slots));
    }
    let mut engine = Engine::new(snapshot, flows, allocation, policy, settings, seed)?;
    let m = engine.run_window(settings.window_slots);
    Ok((m, engine.audit.clone()))
}
