//! Commands behind the `leosim` binary and the files they write.
//!
//! Every command resolves the config (plus command-line overrides), runs,
//! and writes a result bundle into the output directory:
//!
//! | file | written by |
//! |------|------------|
//! | `training_trace.csv` | train, compare, sweep-weights |
//! | `qos_scores.csv` | compare, sweep-weights |
//! | `fairness.csv` | compare, sweep-weights |
//! | `summary.json` | compare, sweep-weights |
//! | `manifest.json` | all |
//!
//! Outputs contain no timestamps, so identical inputs give byte-identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::allocator::{train, MctsParams, TraceRow};
use crate::config::ScenarioConfig;
use crate::seed::substream;
use crate::simulator::{evaluate_plan, plan_allocations, RunPolicy, ScenarioResult, ScenarioSpec, SnapshotRun};
use crate::traffic::{ClassWeights, TrafficClass};
use crate::Error;

pub const SCHEMA_VERSION: &str = "1";
pub const ROLLING_WINDOW: usize = 500;

pub const TRACE_HEADER: [&str; 10] = [
    "draw",
    "snapshot",
    "episode",
    "reward",
    "objective",
    "constraint_violation",
    "epsilon",
    "reward_rolling_mean",
    "constraint_violation_rolling_mean",
    "reward_running_max",
];
pub const QOS_HEADER: [&str; 12] = [
    "policy",
    "ef_weight",
    "iteration",
    "snapshot",
    "window",
    "flow_id",
    "app",
    "class",
    "omega_delta",
    "omega_tau",
    "omega_l",
    "omega_total",
];
pub const FAIRNESS_HEADER: [&str; 6] = [
    "policy",
    "ef_weight",
    "iteration",
    "snapshot",
    "window",
    "fairness_index",
];

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub iterations: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), Error> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(e) = self.episodes {
            cfg.allocator.episodes = e;
        }
        if let Some(i) = self.iterations {
            cfg.simulator.iterations = i;
        }
        cfg.validate()
    }
}

/// Loads `path` and applies `overrides`.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

/// SHA-256 of the effective config in canonical JSON.
pub fn config_hash(cfg: &ScenarioConfig) -> Result<String, Error> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(cfg)?)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Trailing mean over up to `window` entries ending at each index.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let w = &values[(i + 1).saturating_sub(window)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Share of values beyond 1.5 IQR from the quartiles.
    pub outlier_fraction: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile(&v, 0.25);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let outliers = v.iter().filter(|&&x| x < q1 - 1.5 * iqr || x > q3 + 1.5 * iqr).count();
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            median: quantile(&v, 0.5),
            q1,
            q3,
            outlier_fraction: outliers as f64 / v.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub policy: RunPolicy,
    pub ef_weight: f64,
    pub class: TrafficClass,
    pub scores: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessSummary {
    pub policy: RunPolicy,
    pub ef_weight: f64,
    pub fairness: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Summary {
    pub classes: Vec<ClassSummary>,
    pub fairness: Vec<FairnessSummary>,
}

impl Summary {
    pub fn class(&self, policy: RunPolicy, ef_weight: f64, class: TrafficClass) -> Option<&Distribution> {
        self.classes
            .iter()
            .find(|c| c.policy == policy && c.ef_weight == ef_weight && c.class == class)
            .map(|c| &c.scores)
    }

    pub fn fairness(&self, policy: RunPolicy, ef_weight: f64) -> Option<&Distribution> {
        self.fairness
            .iter()
            .find(|c| c.policy == policy && c.ef_weight == ef_weight)
            .map(|c| &c.fairness)
    }

    /// Adds per-class score and fairness distributions of `result`.
    pub fn extend(&mut self, result: &ScenarioResult, policies: &[RunPolicy], ef_weight: f64) {
        for &policy in policies {
            let mut per_class: BTreeMap<TrafficClass, Vec<f64>> = BTreeMap::new();
            let mut fairness = Vec::new();
            for run in result.runs_for(policy) {
                let flows = &result.flows[run.iteration];
                for w in &run.windows {
                    fairness.push(w.fairness);
                    for (f, s) in flows.iter().zip(&w.scores) {
                        per_class.entry(f.class()).or_default().push(s.total);
                    }
                }
            }
            for (class, v) in per_class {
                self.classes.push(ClassSummary {
                    policy,
                    ef_weight,
                    class,
                    scores: Distribution::of(&v),
                });
            }
            self.fairness.push(FairnessSummary {
                policy,
                ef_weight,
                fairness: Distribution::of(&fairness),
            });
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    schema_version: &'static str,
    package_version: &'static str,
    command: String,
    config_sha256: String,
    seed: u64,
    policies: Vec<RunPolicy>,
    ef_weights: Vec<f64>,
    headers: BTreeMap<&'static str, Vec<&'static str>>,
    outputs_sha256: BTreeMap<String, String>,
}

fn write_trace(path: &Path, plan: &[SnapshotRun]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for run in plan.iter().filter(|r| !r.trace.is_empty()) {
        write_trace_rows(&mut w, run.draw, run.snapshot, &run.trace)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_rows(
    w: &mut csv::Writer<fs::File>,
    draw: usize,
    snapshot: usize,
    trace: &[TraceRow],
) -> Result<(), Error> {
    let rewards: Vec<f64> = trace.iter().map(|t| t.reward).collect();
    let costs: Vec<f64> = trace.iter().map(|t| t.constraint_violation).collect();
    let r_mean = rolling_mean(&rewards, ROLLING_WINDOW);
    let c_mean = rolling_mean(&costs, ROLLING_WINDOW);
    let mut best = f64::NEG_INFINITY;
    for (i, t) in trace.iter().enumerate() {
        best = best.max(t.reward);
        w.write_record([
            draw.to_string(),
            snapshot.to_string(),
            t.episode.to_string(),
            t.reward.to_string(),
            t.objective.to_string(),
            t.constraint_violation.to_string(),
            t.epsilon.to_string(),
            r_mean[i].to_string(),
            c_mean[i].to_string(),
            best.to_string(),
        ])?;
    }
    Ok(())
}

fn write_scores(
    qos: &mut csv::Writer<fs::File>,
    fair: &mut csv::Writer<fs::File>,
    result: &ScenarioResult,
    ef_weight: f64,
) -> Result<(), Error> {
    for run in &result.runs {
        let flows = &result.flows[run.iteration];
        let label = run.policy.label();
        for w in &run.windows {
            let common = [
                label.to_string(),
                ef_weight.to_string(),
                w.iteration.to_string(),
                w.snapshot.to_string(),
                w.window.to_string(),
            ];
            for (f, s) in flows.iter().zip(&w.scores) {
                let mut rec: Vec<String> = common.to_vec();
                rec.extend([
                    f.id.to_string(),
                    f.profile.app.label().to_string(),
                    f.class().label().to_string(),
                    s.omega_delta.to_string(),
                    s.omega_tau.to_string(),
                    s.omega_l.to_string(),
                    s.total.to_string(),
                ]);
                qos.write_record(&rec)?;
            }
            let mut rec: Vec<String> = common.to_vec();
            rec.push(w.fairness.to_string());
            fair.write_record(&rec)?;
        }
    }
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &ScenarioConfig,
    policies: &[RunPolicy],
    ef_weights: &[f64],
    files: &[&'static str],
) -> Result<(), Error> {
    let mut headers = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for &name in files {
        let header = match name {
            "training_trace.csv" => TRACE_HEADER.to_vec(),
            "qos_scores.csv" => QOS_HEADER.to_vec(),
            "fairness.csv" => FAIRNESS_HEADER.to_vec(),
            _ => Vec::new(),
        };
        if !header.is_empty() {
            headers.insert(name, header);
        }
        outputs.insert(name.to_string(), hex(&Sha256::digest(fs::read(out.join(name))?)));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        package_version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_sha256: config_hash(cfg)?,
        seed: cfg.seed,
        policies: policies.to_vec(),
        ef_weights: ef_weights.to_vec(),
        headers,
        outputs_sha256: outputs,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Output of [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub trace: Vec<TraceRow>,
    pub best_reward: f64,
}

/// Trains on snapshot 0 of the first flow draw and writes the trace.
pub fn cmd_train(cfg: &ScenarioConfig) -> Result<TrainOutcome, Error> {
    let spec = cfg.to_spec()?;
    let snapshots = spec.snapshots()?;
    let flows = spec.flows(0)?;
    let scenario = spec.training_scenario(&snapshots[0], &flows, 0, 0)?;
    let params = MctsParams {
        seed: substream(spec.seed, "mcts", &[0, 0]),
        ..spec.mcts.clone()
    };
    let trained = train(&scenario, &params)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let run = SnapshotRun {
        draw: 0,
        snapshot: 0,
        timestamp: snapshots[0].timestamp,
        dsroq: None,
        dsroq_choices: None,
        dsroq_reward: None,
        trace: trained.trace.clone(),
        baseline: None,
    };
    write_trace(&out.join("training_trace.csv"), std::slice::from_ref(&run))?;
    write_manifest(&out, "train", cfg, &[RunPolicy::Dsroq], &[], &["training_trace.csv"])?;
    Ok(TrainOutcome {
        out_dir: out,
        trace: trained.trace,
        best_reward: trained.best_reward.reward,
    })
}

/// Output of [`cmd_compare`] and [`cmd_sweep_weights`].
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub out_dir: PathBuf,
    pub plan: Vec<SnapshotRun>,
    /// One result per evaluated EF weight.
    pub results: Vec<(f64, ScenarioResult)>,
    pub summary: Summary,
}

fn evaluate_and_write(
    cfg: &ScenarioConfig,
    spec: &ScenarioSpec,
    plan: Vec<SnapshotRun>,
    policies: &[RunPolicy],
    ef_weights: &[f64],
    command: &str,
) -> Result<CompareOutcome, Error> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut qos = csv::Writer::from_path(out.join("qos_scores.csv"))?;
    let mut fair = csv::Writer::from_path(out.join("fairness.csv"))?;
    qos.write_record(QOS_HEADER)?;
    fair.write_record(FAIRNESS_HEADER)?;
    let mut summary = Summary::default();
    let mut results = Vec::new();
    for &ef in ef_weights {
        let mut s = spec.clone();
        if ef != spec.weights.ef {
            s.scheduling_weights = Some(ClassWeights { ef, ..spec.weights });
        }
        let result = evaluate_plan(&s, &plan, policies)?;
        write_scores(&mut qos, &mut fair, &result, ef)?;
        summary.extend(&result, policies, ef);
        results.push((ef, result));
    }
    qos.flush()?;
    fair.flush()?;
    drop((qos, fair));
    write_trace(&out.join("training_trace.csv"), &plan)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_manifest(
        &out,
        command,
        cfg,
        policies,
        ef_weights,
        &["training_trace.csv", "qos_scores.csv", "fairness.csv", "summary.json"],
    )?;
    Ok(CompareOutcome {
        out_dir: out,
        plan,
        results,
        summary,
    })
}

/// Trains per snapshot and evaluates `policies` on identical flows and
/// arrival seeds.
pub fn cmd_compare(cfg: &ScenarioConfig, policies: &[RunPolicy]) -> Result<CompareOutcome, Error> {
    if policies.is_empty() {
        return Err(Error::Config("no policies requested".into()));
    }
    let spec = cfg.to_spec()?;
    let plan = plan_allocations(&spec, policies)?;
    evaluate_and_write(cfg, &spec, plan, policies, &[spec.weights.ef], "compare")
}

/// Trains once with the configured weights, then re-evaluates scheduling
/// with each EF weight in `ef_weights`.
pub fn cmd_sweep_weights(
    cfg: &ScenarioConfig,
    ef_weights: &[f64],
    policies: &[RunPolicy],
) -> Result<CompareOutcome, Error> {
    if ef_weights.is_empty() || ef_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Config(
            "ef weights must be a nonempty list of positive numbers".into(),
        ));
    }
    if policies.is_empty() {
        return Err(Error::Config("no policies requested".into()));
    }
    let spec = cfg.to_spec()?;
    let plan = plan_allocations(&spec, policies)?;
    evaluate_and_write(cfg, &spec, plan, policies, ef_weights, "sweep-weights")
}

/// Parses and validates a config; returns a one-line description.
pub fn cmd_validate(path: &Path) -> Result<String, Error> {
    let cfg = ScenarioConfig::load(path)?;
    let spec = cfg.to_spec()?;
    let snaps = spec.snapshots()?;
    Ok(format!(
        "ok: {} snapshot(s) of a {}x{} subgrid, {} flows, {} episodes, {} iteration(s), slot {:.3} ms, config sha256 {}",
        snaps.len(),
        spec.subgrid.rows,
        spec.subgrid.cols,
        spec.flow_count,
        spec.mcts.episodes,
        spec.iterations,
        spec.sim.slot_seconds * 1e3,
        config_hash(&cfg)?
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rolling_mean_is_trailing() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(rolling_mean(&v, 2), vec![1.0, 1.5, 2.5, 3.5, 4.5]);
        assert_eq!(rolling_mean(&v, 10)[4], 3.0);
    }

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        let d = Distribution::of(&[1.0, 1.0, 1.0, 1.0, 9.0]);
        assert_eq!(d.median, 1.0);
        assert!((d.outlier_fraction - 0.2).abs() < 1e-12);
    }
}
