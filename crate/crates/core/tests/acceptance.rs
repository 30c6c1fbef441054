//! Acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process exits nonzero if any criterion fails.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use leosim::allocator::{
    backpropagate, capacity_cost, epsilon_schedule, reward_value, train, Choice, MctsParams, MctsTree, Scenario,
};
use leosim::commands::{cmd_compare, rolling_mean, CompareOutcome};
use leosim::config::ScenarioConfig;
use leosim::constellation::{snapshot_sequence, IslEdge, SatId, ShellParams, SubgridSpec, TopologySnapshot};
use leosim::qos::{composite_score, fairness_index, map_score, weighted_objective, Orientation, ScoreBounds};
use leosim::scheduler::{
    compute_per_hop_bounds, update_virtual_queue, EgressState, FlowQueue, PerHopBounds, Policy, ScheduleParams,
};
use leosim::simulator::{evaluate_plan, AllocationConfig, FlowAllocation, RunPolicy, SimSettings};
use leosim::traffic::{class_weight, AggregatedFlow, AppKind, AppProfile, Bounds, TrafficClass, Zeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SCORE: ScoreBounds = ScoreBounds {
    omega_max: 5.0,
    omega_min: 1.0,
};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn zeta_of(class: TrafficClass) -> Zeta {
    match class {
        TrafficClass::Ef => Zeta::new(0.8, 0.1, 0.1),
        TrafficClass::Af => Zeta::new(0.1, 0.45, 0.45),
        TrafficClass::Be => Zeta::new(0.1, 0.8, 0.1),
    }
}

fn line(delays: &[f64]) -> TopologySnapshot {
    let n = delays.len() + 1;
    let mut edges = Vec::new();
    for (i, &d) in delays.iter().enumerate() {
        edges.push(IslEdge {
            from: i,
            to: i + 1,
            propagation_delay: d,
        });
        edges.push(IslEdge {
            from: i + 1,
            to: i,
            propagation_delay: d,
        });
    }
    let ids = (0..n).map(|s| SatId { plane: 0, slot: s }).collect();
    TopologySnapshot::new(0.0, ids, vec![[0.0; 3]; n], edges)
}

struct Checks {
    count: usize,
    failures: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self {
            count: 0,
            failures: Vec::new(),
        }
    }

    /// Relative tolerance 1e-9; an expected zero must be matched exactly.
    fn close(&mut self, name: &str, got: f64, want: f64) {
        self.count += 1;
        let ok = if want == 0.0 {
            got == 0.0
        } else {
            (got - want).abs() <= 1e-9 * want.abs()
        };
        if !ok {
            self.failures.push(format!("{name}: got {got}, want {want}"));
        }
    }

    fn finish(self) -> Outcome {
        if self.failures.is_empty() {
            Ok(format!("{} values within 1e-9", self.count))
        } else {
            Err(self.failures.join("; "))
        }
    }
}

fn criterion_1() -> Outcome {
    let mut c = Checks::new();
    let lat = Orientation::LowerIsBetter;
    let thr = Orientation::HigherIsBetter;
    let m = |v, lo, hi, o| map_score(v, lo, hi, o, &SCORE).map_err(|e| e.to_string());
    c.close("latency at lower bound", m(0.1, 0.1, 0.3, lat)?, 5.0);
    c.close("latency midpoint", m(0.2, 0.1, 0.3, lat)?, 3.0);
    c.close("throughput above upper bound", m(0.7, 0.1, 0.5, thr)?, 5.0);

    c.close(
        "composite",
        composite_score(5.0, 3.0, 1.0, &Zeta::new(0.8, 0.1, 0.1)),
        4.4,
    );
    c.close(
        "composite all max",
        composite_score(5.0, 5.0, 5.0, &Zeta::new(0.1, 0.45, 0.45)),
        5.0,
    );
    c.close(
        "composite degenerate",
        composite_score(2.0, 5.0, 5.0, &Zeta::new(1.0, 0.0, 0.0)),
        2.0,
    );

    let obj = |w: &[f64], s: &[f64]| weighted_objective(w, s, &SCORE).map_err(|e| e.to_string());
    c.close("objective all max", obj(&[20.0, 2.0, 1.0], &[5.0; 3])?, 1.0);
    c.close("objective weighted", obj(&[20.0, 1.0], &[5.0, 2.5])?, 102.5 / 105.0);
    c.close("objective single min", obj(&[1.0], &[1.0])?, 0.2);

    c.close("fairness equal", fairness_index(&[3.0, 3.0, 3.0], &SCORE), 1.0);
    c.close("fairness two extremes", fairness_index(&[5.0, 1.0], &SCORE), 0.0);
    c.close(
        "fairness four extremes",
        fairness_index(&[5.0, 5.0, 1.0, 1.0], &SCORE),
        0.0,
    );

    let g = line(&[0.005, 0.005]);
    let cfg = |a: f64, b: f64, d: f64| AllocationConfig {
        flows: vec![
            FlowAllocation {
                route: vec![0],
                bandwidth: a,
            },
            FlowAllocation {
                route: vec![0, 2],
                bandwidth: b,
            },
            FlowAllocation {
                route: vec![2],
                bandwidth: d,
            },
        ],
    };
    c.close("capacity cost underloaded", capacity_cost(&cfg(0.3, 0.3, 0.3), &g), 0.0);
    c.close("capacity cost one link", capacity_cost(&cfg(1.0, 0.5, 0.0), &g), 0.5);
    c.close("capacity cost two links", capacity_cost(&cfg(0.7, 0.5, 0.8), &g), 0.5);

    c.close("reward", reward_value(0.8, 0.5, 0.4), 0.6);
    c.close("reward without violation", reward_value(0.83, 0.0, 7.0), 0.83);

    let mut tree = MctsTree::new(vec![(1, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let path = tree.descend(1.0, &mut rng, None);
    backpropagate(&mut tree, &path, 0.5);
    c.close("q of a fresh node", tree.node(path[1]).q_value, 0.5);
    backpropagate(&mut tree, &path, 0.6);
    c.close("q raised", tree.node(path[1]).q_value, 0.6);
    backpropagate(&mut tree, &path, 0.7);
    backpropagate(&mut tree, &path, 0.6);
    c.close("q kept", tree.node(path[1]).q_value, 0.7);
    c.close("q at root", tree.root().q_value, 0.7);

    let p = MctsParams::default();
    let eps = |z| epsilon_schedule(z, &p).map_err(|e| e.to_string());
    c.close("epsilon start", eps(0)?, 0.5);
    c.close("epsilon floor", eps(9900)?, 0.05);
    c.close("epsilon midway", eps(1000)?, 1.0 - 0.5 * 20f64.log10());

    c.close("virtual queue grows", update_virtual_queue(0.4, 0.3, false), 0.7);
    c.close("virtual queue clamps", update_virtual_queue(0.2, 0.3, true), 0.0);
    c.close("virtual queue idle", update_virtual_queue(1.25, 0.0, false), 1.25);

    let snap = line(&[0.009, 0.009, 0.009]);
    let route = [0, 2, 4];
    let mut util = vec![0.0; 6];
    util[0] = 0.8;
    util[2] = 0.5;
    util[4] = 0.5;
    let hb = |lat: Bounds, r: &[usize], u: &[f64]| {
        compute_per_hop_bounds(0, lat, r, u, &snap, 0.001).map_err(|e| e.to_string())
    };
    c.close(
        "per-hop bound congested",
        hb(Bounds::new(0.1, 0.3), &route, &util)?[0].delta_max_hop,
        0.120,
    );
    let uniform = vec![0.4; 6];
    let b = hb(Bounds::new(0.1, 0.3), &route, &uniform)?;
    c.close("per-hop bound uniform", b[1].delta_max_hop, (0.3 - 0.03) / 3.0);
    c.close("per-hop min bound uniform", b[1].delta_min_hop, (0.1 - 0.03) / 3.0);
    c.close(
        "per-hop bound single hop",
        hb(Bounds::new(0.1, 0.3), &[0], &uniform)?[0].delta_max_hop,
        0.3 - 0.009 - 0.001,
    );
    c.finish()
}

/// Latency score of a per-hop delay, written out independently of the crate.
fn oracle_hop_score(delay_s: f64, b: &PerHopBounds) -> f64 {
    let (lo, hi) = (b.delta_min_hop, b.delta_max_hop);
    if delay_s <= lo {
        5.0
    } else if delay_s >= hi {
        1.0
    } else {
        5.0 - 4.0 * (delay_s - lo) / (hi - lo)
    }
}

fn criterion_2() -> Outcome {
    const STATES: usize = 5000;
    let slot = 0.001;
    let params = ScheduleParams {
        slot_seconds: slot,
        score: SCORE,
    };
    let classes = [TrafficClass::Ef, TrafficClass::Af, TrafficClass::Be];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties = 0;
    for state in 0..STATES {
        let n = rng.random_range(2..=8);
        let now = 10_000u64;
        let zero_v = rng.random_bool(0.2);
        let mut link: EgressState<u32> = EgressState::new(64, params);
        // Per flow: (weight, zeta, bounds, hoq delay in slots, V), or None if idle.
        let mut view = Vec::new();
        for f in 0..n {
            let class = classes[rng.random_range(0..3)];
            let weight = class_weight(class);
            let zeta = zeta_of(class);
            let lo = rng.random_range(0.0..0.02);
            let bounds = PerHopBounds {
                flow_id: f,
                link: 0,
                delta_min_hop: lo,
                delta_max_hop: lo + rng.random_range(0.002..0.05),
            };
            let pos = link.add_flow(FlowQueue::new(f, weight, zeta, class, 0.1, Some(bounds)));
            let v = if zero_v { 0.0 } else { rng.random_range(0.0..5.0) };
            link.flows[pos].virtual_queue = v;
            if rng.random_bool(0.85) {
                let max_slots = (1.5 * bounds.delta_max_hop / slot).ceil() as u64;
                let d = rng.random_range(0..=max_slots);
                link.enqueue(pos, 0, now - d);
                view.push(Some((weight, zeta, bounds, d, v)));
            } else {
                view.push(None);
            }
        }
        let got = link.select(now, Policy::Lyapunov);

        // Brute force over one-hot schedules: each flow contributes
        // w * (zeta_d * Omega(next delay) + zeta_t * V * s).
        let objective = |served: usize| -> f64 {
            view.iter()
                .enumerate()
                .filter_map(|(f, st)| st.map(|s| (f, s)))
                .map(|(f, (w, z, b, d, v))| {
                    let s = if f == served { 1.0 } else { 0.0 };
                    let next = if f == served { d } else { d + 1 };
                    w * (z.latency * oracle_hop_score(next as f64 * slot, &b) + z.throughput * v * s)
                })
                .sum()
        };
        let candidates: Vec<usize> = (0..n).filter(|&f| view[f].is_some()).collect();
        let values: Vec<f64> = candidates.iter().map(|&f| objective(f)).collect();
        let best_value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * best_value.abs().max(1.0);
        let tied: Vec<usize> = candidates
            .iter()
            .zip(&values)
            .filter(|(_, &v)| best_value - v <= tol)
            .map(|(&f, _)| f)
            .collect();
        if tied.len() > 1 {
            ties += 1;
        }
        let want = tied.iter().copied().min_by(|&a, &b| {
            let (wa, wb) = (view[a].unwrap().0, view[b].unwrap().0);
            wb.partial_cmp(&wa).unwrap().then(a.cmp(&b))
        });
        let got_flow = got.map(|p| link.flows[p].flow);
        if got_flow != want {
            return Err(format!(
                "state {state}: scheduler chose {got_flow:?}, brute force {want:?}"
            ));
        }
    }
    Ok(format!("{STATES}/{STATES} states agree ({ties} with tied objectives)"))
}

fn criterion_3() -> Outcome {
    const SLOTS: u64 = 100_000;
    let params = ScheduleParams {
        slot_seconds: 0.001,
        score: SCORE,
    };
    let flows = [
        (TrafficClass::Ef, 0.2),
        (TrafficClass::Af, 0.3),
        (TrafficClass::Af, 0.15),
        (TrafficClass::Be, 0.3),
    ];
    let mut link: EgressState<u32> = EgressState::new(usize::MAX, params);
    for (f, &(class, b)) in flows.iter().enumerate() {
        let bounds = PerHopBounds {
            flow_id: f,
            link: 0,
            delta_min_hop: 0.005,
            delta_max_hop: 0.030,
        };
        link.add_flow(FlowQueue::new(
            f,
            class_weight(class),
            zeta_of(class),
            class,
            b,
            Some(bounds),
        ));
    }
    let mut max_v: f64 = 0.0;
    for now in 0..SLOTS {
        for pos in 0..flows.len() {
            if link.flows[pos].queue.is_empty() {
                link.enqueue(pos, 0, now);
            }
        }
        link.schedule_slot(now, Policy::Lyapunov);
        for f in &link.flows {
            max_v = max_v.max(f.virtual_queue);
        }
    }
    let final_ratio = link.flows.iter().map(|f| f.virtual_queue).fold(0.0, f64::max) / SLOTS as f64;
    let detail = format!("max V {max_v:.3} packets, max V/N {final_ratio:.2e}");
    if max_v < 100.0 && final_ratio < 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_flow(id: usize, source: usize, dest: usize, class: TrafficClass) -> AggregatedFlow {
    let app = match class {
        TrafficClass::Ef => AppKind::Vc,
        TrafficClass::Af => AppKind::Ls,
        TrafficClass::Be => AppKind::Ft,
    };
    AggregatedFlow {
        id,
        source,
        dest,
        weight: class_weight(class),
        profile: AppProfile {
            app,
            class,
            zeta: zeta_of(class),
            latency: Bounds::new(0.010, 0.030),
            throughput: Bounds::new(0.2, 0.6),
            drop: Bounds::new(0.0, 0.1),
        },
        beta: 1,
    }
}

fn criterion_4() -> Outcome {
    const RUNS: u64 = 20;
    let sub = SubgridSpec {
        rows: 2,
        cols: 2,
        anchor: SatId { plane: 0, slot: 0 },
    };
    let snap = snapshot_sequence(&ShellParams::default(), sub, 15.0, 15.0)
        .map_err(|e| e.to_string())?
        .remove(0)
        .0;
    let flows = vec![
        // Three flows between the same corners over two routes: at least two
        // share a route, so the top bandwidths overload it.
        small_flow(0, 0, 3, TrafficClass::Ef),
        small_flow(1, 0, 3, TrafficClass::Af),
        small_flow(2, 0, 3, TrafficClass::Be),
    ];
    let sim = SimSettings {
        window_slots: 2000,
        ..SimSettings::default()
    };
    let scenario = Scenario::build(snap, flows, 2, 2, sim, 77).map_err(|e| e.to_string())?;
    let leaves = scenario.leaf_count();
    if leaves > 64.0 {
        return Err(format!("instance has {leaves} leaves"));
    }
    let lambda = MctsParams::default().lambda;
    let spaces: Vec<(usize, usize)> = (0..scenario.flows.len()).map(|f| scenario.action_space(f)).collect();
    let mut oracle = f64::NEG_INFINITY;
    for code in 0..leaves as usize {
        let mut rest = code;
        let choices: Vec<Choice> = spaces
            .iter()
            .map(|&(r, b)| {
                let a = rest % (r * b);
                rest /= r * b;
                Choice {
                    route: (a / b) as u16,
                    bandwidth: (a % b) as u16,
                }
            })
            .collect();
        let rw = scenario
            .evaluate(&scenario.resolve(&choices), Policy::Lyapunov, lambda)
            .map_err(|e| e.to_string())?;
        oracle = oracle.max(rw.reward);
    }
    let mut hits = 0;
    for seed in 0..RUNS {
        let params = MctsParams {
            episodes: 500,
            seed,
            ..MctsParams::default()
        };
        let t = train(&scenario, &params).map_err(|e| e.to_string())?;
        if t.best_reward.reward == oracle {
            hits += 1;
        }
    }
    let detail = format!("{hits}/{RUNS} runs reach the optimum {oracle:.6} over {leaves} leaves");
    if hits * 100 >= 95 * RUNS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn acceptance_config(out: PathBuf) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::load(&configs_dir().join("acceptance.toml")).map_err(|e| e.to_string())?;
    cfg.output_dir = out;
    Ok(cfg)
}

fn run_compare(out: PathBuf) -> Result<CompareOutcome, String> {
    let cfg = acceptance_config(out)?;
    cmd_compare(&cfg, &RunPolicy::ALL).map_err(|e| e.to_string())
}

fn criterion_5(cfg: &ScenarioConfig, run: &CompareOutcome) -> Outcome {
    const WINDOW: usize = 500;
    let trace = &run.plan[0].trace;
    if trace.len() < 3000 || trace.len() < WINDOW {
        return Err(format!("only {} episodes", trace.len()));
    }
    let rewards: Vec<f64> = trace.iter().map(|r| r.reward).collect();
    let violations: Vec<f64> = trace.iter().map(|r| r.constraint_violation).collect();
    let rm = rolling_mean(&rewards, WINDOW);
    let cm = rolling_mean(&violations, WINDOW);
    let (first, last) = (rm[WINDOW - 1], rm[rm.len() - 1]);
    let final_c = cm[cm.len() - 1];
    let detail = format!(
        "{} flows, {} episodes: rolling reward {first:.4} -> {last:.4}, final rolling violation {final_c}",
        cfg.traffic.flow_count,
        trace.len()
    );
    if last - first >= 0.02 && final_c == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6(run: &CompareOutcome) -> Outcome {
    let ef = run.results[0].0;
    let med = |p: RunPolicy, c: TrafficClass| {
        run.summary
            .class(p, ef, c)
            .map(|d| d.median)
            .ok_or_else(|| format!("no {} {} scores", p.label(), c.label()))
    };
    let (e, a, b) = (
        med(RunPolicy::Dsroq, TrafficClass::Ef)?,
        med(RunPolicy::Dsroq, TrafficClass::Af)?,
        med(RunPolicy::Dsroq, TrafficClass::Be)?,
    );
    let fifo = med(RunPolicy::DsroqFifo, TrafficClass::Ef)?;
    let detail = format!("medians EF {e:.4} AF {a:.4} BE {b:.4}; FIFO EF {fifo:.4}");
    if e >= a && a >= b && e > fifo {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7(cfg: &ScenarioConfig, run: &CompareOutcome) -> Outcome {
    let result = &run.results[0].1;
    let iterations = result.runs_for(RunPolicy::Dsroq).count();
    let f = |p: RunPolicy| result.mean_fairness(p).ok_or_else(|| format!("no {} runs", p.label()));
    let (d, fifo, base) = (f(RunPolicy::Dsroq)?, f(RunPolicy::DsroqFifo)?, f(RunPolicy::Baseline)?);
    let detail =
        format!("mean fairness over {iterations} iterations: dsroq {d:.4}, dsroq-fifo {fifo:.4}, baseline {base:.4}");
    if iterations >= 10 && iterations == cfg.simulator.iterations && d > base && d >= fifo {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8(cfg: &ScenarioConfig, run: &CompareOutcome) -> Outcome {
    let mut spec = cfg.to_spec().map_err(|e| e.to_string())?;
    spec.sim.audit = true;
    let audited = evaluate_plan(&spec, &run.plan, &RunPolicy::ALL).map_err(|e| e.to_string())?;
    let mut slots = 0;
    let mut flows_checked = 0;
    for r in audited.runs.iter().chain(&run.results[0].1.runs) {
        if !r.audit.is_clean() {
            return Err(format!("{} iteration {}: {:?}", r.policy.label(), r.iteration, r.audit));
        }
        slots += r.audit.slots_checked;
        for (f, t) in r.totals.iter().enumerate() {
            if t.generated != t.delivered + t.dropped + r.in_flight[f] {
                return Err(format!(
                    "{} iteration {} flow {f}: {t:?}",
                    r.policy.label(),
                    r.iteration
                ));
            }
            flows_checked += 1;
        }
    }
    if slots == 0 {
        return Err("audit checked no slots".into());
    }
    Ok(format!(
        "{slots} audited slots and {flows_checked} end-of-run balances, zero violations"
    ))
}

fn criterion_9(first: &CompareOutcome, second_dir: PathBuf) -> Outcome {
    let second = run_compare(second_dir)?;
    let files = ["training_trace.csv", "qos_scores.csv", "fairness.csv", "summary.json"];
    let mut bytes = 0;
    for name in files {
        let a = fs::read(first.out_dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = fs::read(second.out_dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
        bytes += a.len();
    }
    Ok(format!("{} files, {bytes} bytes identical", files.len()))
}

fn report(id: usize, name: &str, started: Instant, outcome: Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {id} {tag} {name}: {detail} ({secs:.1} s)");
    ok
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "equation suite", t, criterion_1());
    let t = Instant::now();
    ok &= report(2, "scheduling-rule equivalence", t, criterion_2());
    let t = Instant::now();
    ok &= report(3, "virtual-queue stability", t, criterion_3());
    let t = Instant::now();
    ok &= report(4, "search optimality on small instances", t, criterion_4());

    let dir = tempfile::tempdir().expect("temporary directory");
    let t = Instant::now();
    let shared = acceptance_config(dir.path().join("a")).and_then(|cfg| Ok((run_compare(dir.path().join("a"))?, cfg)));
    let compare_secs = t.elapsed().as_secs_f64();
    match &shared {
        Ok((run, cfg)) => {
            println!("shared compare run on configs/acceptance.toml took {compare_secs:.1} s");
            let t = Instant::now();
            ok &= report(5, "training convergence", t, criterion_5(cfg, run));
            let t = Instant::now();
            ok &= report(6, "per-class scores", t, criterion_6(run));
            let t = Instant::now();
            ok &= report(7, "fairness", t, criterion_7(cfg, run));
            let t = Instant::now();
            ok &= report(8, "simulator conservation", t, criterion_8(cfg, run));
            let t = Instant::now();
            ok &= report(9, "determinism", t, criterion_9(run, dir.path().join("b")));
        }
        Err(e) => {
            for (id, name) in [
                (5, "training convergence"),
                (6, "per-class scores"),
                (7, "fairness"),
                (8, "simulator conservation"),
                (9, "determinism"),
            ] {
                ok &= report(id, name, t, Err(format!("compare run failed: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
