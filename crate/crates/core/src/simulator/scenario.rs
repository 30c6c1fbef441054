//! Multi-snapshot, multi-iteration experiment driver.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AllocationConfig, AuditReport, Engine, FlowCounters, SimSettings};
use crate::allocator::{
    baseline_sequential, train_from, AllocError, Choice, MctsParams, RewardBreakdown, Scenario, TraceRow,
};
use crate::constellation::{snapshot_sequence, ShellParams, SubgridSpec, TopologySnapshot};
use crate::qos::{fairness_index, weighted_objective, FlowScore, WindowMetrics};
use crate::scheduler::Policy;
use crate::seed::substream;
use crate::traffic::{aggregate, generate_flows, AggregatedFlow, AppMix, ClassWeights, ProfileSet};
use crate::Error;

/// Allocation scheme plus the scheduler it runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunPolicy {
    /// Tree-search allocation, drift-plus-penalty scheduling.
    Dsroq,
    /// Tree-search allocation, FIFO scheduling.
    DsroqFifo,
    /// Sequential shortest-path allocation.
    Baseline,
}

impl RunPolicy {
    pub const ALL: [RunPolicy; 3] = [RunPolicy::Dsroq, RunPolicy::DsroqFifo, RunPolicy::Baseline];

    pub fn label(self) -> &'static str {
        match self {
            RunPolicy::Dsroq => "dsroq",
            RunPolicy::DsroqFifo => "dsroq-fifo",
            RunPolicy::Baseline => "baseline",
        }
    }
}

impl fmt::Display for RunPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RunPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunPolicy::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected dsroq, dsroq-fifo or baseline)"))
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub shell: ShellParams,
    pub subgrid: SubgridSpec,
    pub duration_s: f64,
    pub snapshot_interval_s: f64,
    pub flow_count: usize,
    pub mix: AppMix,
    pub profiles: ProfileSet,
    /// Weights used for training.
    pub weights: ClassWeights,
    /// Weights the schedulers see during evaluation; `None` reuses `weights`.
    pub scheduling_weights: Option<ClassWeights>,
    pub k_routes: usize,
    pub bandwidth_levels: usize,
    pub mcts: MctsParams,
    /// Scheduler used with the baseline allocation.
    pub baseline_policy: Policy,
    pub sim: SimSettings,
    pub windows_per_snapshot: usize,
    pub iterations: usize,
    /// Draw a fresh flow set (and retrain) every iteration.
    pub resample_flows: bool,
    /// Pin the first episode of each snapshot's training to the previous
    /// snapshot's best configuration.
    pub warm_start: bool,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn regions(&self) -> Vec<usize> {
        (0..self.subgrid.rows * self.subgrid.cols).collect()
    }

    pub fn snapshots(&self) -> Result<Vec<TopologySnapshot>, Error> {
        Ok(
            snapshot_sequence(&self.shell, self.subgrid, self.duration_s, self.snapshot_interval_s)?
                .into_iter()
                .map(|(s, _)| s)
                .collect(),
        )
    }

    /// Aggregated flow set for `iteration` (iteration 0's set when flows are
    /// not resampled).
    pub fn flows(&self, iteration: usize) -> Result<Vec<AggregatedFlow>, Error> {
        let draw = if self.resample_flows { iteration as u64 } else { 0 };
        let records = generate_flows(
            self.flow_count,
            &self.mix,
            &self.regions(),
            substream(self.seed, "flows", &[draw]),
        )?;
        Ok(aggregate(&records, &self.profiles, &self.weights))
    }

    fn eval_flows(&self, flows: &[AggregatedFlow]) -> Vec<AggregatedFlow> {
        match &self.scheduling_weights {
            Some(w) => flows
                .iter()
                .map(|f| AggregatedFlow {
                    weight: w.class_weight(f.class()),
                    ..f.clone()
                })
                .collect(),
            None => flows.to_vec(),
        }
    }

    /// Training scenario for one snapshot.
    pub fn training_scenario(
        &self,
        snapshot: &TopologySnapshot,
        flows: &[AggregatedFlow],
        draw: usize,
        snapshot_index: usize,
    ) -> Result<Scenario, AllocError> {
        Scenario::build(
            snapshot.clone(),
            flows.to_vec(),
            self.k_routes,
            self.bandwidth_levels,
            self.sim,
            substream(self.seed, "train-arrivals", &[draw as u64, snapshot_index as u64]),
        )
    }
}

/// Allocations for one (flow draw, snapshot) pair.
#[derive(Debug, Clone)]
pub struct SnapshotRun {
    /// Flow draw the allocation was trained for.
    pub draw: usize,
    pub snapshot: usize,
    pub timestamp: f64,
    pub dsroq: Option<AllocationConfig>,
    pub dsroq_choices: Option<Vec<Choice>>,
    pub dsroq_reward: Option<RewardBreakdown>,
    pub trace: Vec<TraceRow>,
    pub baseline: Option<AllocationConfig>,
}

/// Metrics of one measurement window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub iteration: usize,
    pub snapshot: usize,
    pub window: usize,
    pub metrics: WindowMetrics,
    pub scores: Vec<FlowScore>,
    pub objective: f64,
    pub fairness: f64,
}

/// One policy's run through every snapshot of one iteration.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: RunPolicy,
    pub iteration: usize,
    pub windows: Vec<WindowRecord>,
    /// End-of-run counters per flow.
    pub totals: Vec<FlowCounters>,
    /// Packets still queued or propagating at the end, per flow.
    pub in_flight: Vec<u64>,
    pub audit: AuditReport,
    /// Number of times allocations and state were carried to a new snapshot.
    pub migrations: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    /// Flow set per iteration (as seen by the schedulers).
    pub flows: Vec<Vec<AggregatedFlow>>,
    pub allocations: Vec<SnapshotRun>,
    pub runs: Vec<PolicyRun>,
}

impl ScenarioResult {
    pub fn runs_for(&self, policy: RunPolicy) -> impl Iterator<Item = &PolicyRun> {
        self.runs.iter().filter(move |r| r.policy == policy)
    }

    /// Mean of the per-window fairness index over all windows of `policy`.
    pub fn mean_fairness(&self, policy: RunPolicy) -> Option<f64> {
        let v: Vec<f64> = self
            .runs_for(policy)
            .flat_map(|r| r.windows.iter().map(|w| w.fairness))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains (or reuses) allocations for every snapshot in each flow draw.
pub fn plan_allocations(spec: &ScenarioSpec, policies: &[RunPolicy]) -> Result<Vec<SnapshotRun>, Error> {
    let snapshots = spec.snapshots()?;
    let draws = if spec.resample_flows { spec.iterations } else { 1 };
    let need_tree = policies
        .iter()
        .any(|p| matches!(p, RunPolicy::Dsroq | RunPolicy::DsroqFifo));
    let need_base = policies.contains(&RunPolicy::Baseline);
    let mut out = Vec::new();
    for draw in 0..draws {
        let flows = spec.flows(draw)?;
        let mut prev: Option<Vec<Choice>> = None;
        for (s, snap) in snapshots.iter().enumerate() {
            let scenario = spec.training_scenario(snap, &flows, draw, s)?;
            let mut run = SnapshotRun {
                draw,
                snapshot: s,
                timestamp: snap.timestamp,
                dsroq: None,
                dsroq_choices: None,
                dsroq_reward: None,
                trace: Vec::new(),
                baseline: None,
            };
            if need_tree {
                let params = MctsParams {
                    seed: substream(spec.seed, "mcts", &[draw as u64, s as u64]),
                    ..spec.mcts.clone()
                };
                let warm = if spec.warm_start { prev.as_deref() } else { None };
                let trained = train_from(&scenario, &params, warm)?;
                prev = Some(trained.best_choices.clone());
                run.dsroq = Some(trained.best_config);
                run.dsroq_choices = Some(trained.best_choices);
                run.dsroq_reward = Some(trained.best_reward);
                run.trace = trained.trace;
            }
            if need_base {
                run.baseline = Some(baseline_sequential(&scenario)?);
            }
            out.push(run);
        }
    }
    Ok(out)
}

fn window_record(
    iteration: usize,
    snapshot: usize,
    window: usize,
    metrics: WindowMetrics,
    flows: &[AggregatedFlow],
    settings: &SimSettings,
) -> Result<WindowRecord, Error> {
    let scores = metrics.scores(flows, &settings.score);
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let weights: Vec<f64> = flows.iter().map(|f| f.weight).collect();
    Ok(WindowRecord {
        iteration,
        snapshot,
        window,
        objective: weighted_objective(&weights, &totals, &settings.score)?,
        fairness: fairness_index(&totals, &settings.score),
        metrics,
        scores,
    })
}

/// Runs every policy over every snapshot and iteration using `plan`.
pub fn evaluate_plan(
    spec: &ScenarioSpec,
    plan: &[SnapshotRun],
    policies: &[RunPolicy],
) -> Result<ScenarioResult, Error> {
    let snapshots = spec.snapshots()?;
    let mut result = ScenarioResult {
        flows: Vec::new(),
        allocations: plan.to_vec(),
        runs: Vec::new(),
    };
    for it in 0..spec.iterations {
        let draw = if spec.resample_flows { it } else { 0 };
        let flows = spec.eval_flows(&spec.flows(draw)?);
        let arrivals = substream(spec.seed, "arrivals", &[it as u64]);
        for &policy in policies {
            let mut engine: Option<Engine> = None;
            let mut windows = Vec::new();
            let mut migrations = 0;
            for (s, snap) in snapshots.iter().enumerate() {
                let entry = plan
                    .iter()
                    .find(|r| r.draw == draw && r.snapshot == s)
                    .ok_or_else(|| Error::Plan(format!("no allocation for draw {draw}, snapshot {s}")))?;
                let (alloc, sched) = match policy {
                    RunPolicy::Dsroq => (entry.dsroq.as_ref(), Policy::Lyapunov),
                    RunPolicy::DsroqFifo => (entry.dsroq.as_ref(), Policy::Fifo),
                    RunPolicy::Baseline => (entry.baseline.as_ref(), spec.baseline_policy),
                };
                let alloc = alloc.ok_or_else(|| Error::Plan(format!("policy {policy} was not planned")))?;
                match engine.as_mut() {
                    None => engine = Some(Engine::new(snap, &flows, alloc, sched, spec.sim, arrivals)?),
                    Some(e) => {
                        e.install(snap, &flows, alloc, arrivals)?;
                        migrations += 1;
                    }
                }
                let e = engine.as_mut().expect("engine initialised");
                for w in 0..spec.windows_per_snapshot {
                    let m = e.run_window(spec.sim.window_slots);
                    windows.push(window_record(it, s, w, m, &flows, &spec.sim)?);
                }
            }
            let e = engine.expect("at least one snapshot");
            result.runs.push(PolicyRun {
                policy,
                iteration: it,
                windows,
                totals: (0..flows.len()).map(|f| e.totals(f).clone()).collect(),
                in_flight: (0..flows.len()).map(|f| e.in_flight(f)).collect(),
                audit: e.audit().clone(),
                migrations,
            });
        }
        result.flows.push(flows);
    }
    Ok(result)
}

/// Plans allocations and evaluates every requested policy.
pub fn run_scenario(spec: &ScenarioSpec, policies: &[RunPolicy]) -> Result<ScenarioResult, Error> {
    if policies.is_empty() {
        return Err(Error::Plan("no policies requested".into()));
    }
    let plan = plan_allocations(spec, policies)?;
    evaluate_plan(spec, &plan, policies)
}
