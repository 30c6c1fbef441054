//! TOML scenario configuration.
//!
//! Physical quantities are given in friendly units (milliseconds, Mbps) and
//! converted to seconds and packets per slot by [`ScenarioConfig::to_spec`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::{FlowOrder, MctsParams};
use crate::constellation::{SatId, ShellParams, SubgridSpec};
use crate::qos::ScoreBounds;
use crate::scheduler::Policy;
use crate::simulator::{ScenarioSpec, SimSettings};
use crate::traffic::{
    AppKind, AppMix, AppProfile, Bounds, ClassWeights, ProfileSet, TrafficClass, UnitConversion, Zeta,
};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub constellation: ConstellationSection,
    pub traffic: TrafficSection,
    #[serde(default)]
    pub qos: ScoreBounds,
    #[serde(default)]
    pub allocator: AllocatorSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub simulator: SimulatorSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationSection {
    pub plane_count: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub phasing_offset: usize,
    pub earth_radius_km: f64,
    pub subgrid_rows: usize,
    pub subgrid_cols: usize,
    pub anchor_plane: usize,
    pub anchor_slot: usize,
    pub duration_s: f64,
    pub snapshot_interval_s: f64,
}

impl Default for ConstellationSection {
    fn default() -> Self {
        let shell = ShellParams::default();
        Self {
            plane_count: shell.plane_count,
            sats_per_plane: shell.sats_per_plane,
            altitude_km: shell.altitude_km,
            inclination_deg: shell.inclination_deg,
            phasing_offset: shell.phasing_offset,
            earth_radius_km: shell.earth_radius_km,
            subgrid_rows: 4,
            subgrid_cols: 4,
            anchor_plane: 0,
            anchor_slot: 0,
            duration_s: 60.0,
            snapshot_interval_s: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub app: AppKind,
    pub class: TrafficClass,
    pub zeta: [f64; 3],
    /// Milliseconds, `[min, max]`.
    pub latency_ms: [f64; 2],
    /// Mbps per constituent flow, `[min, max]`.
    pub throughput_mbps: [f64; 2],
    /// Fraction, `[min, max]`.
    pub drop: [f64; 2],
}

impl ProfileEntry {
    fn to_profile(&self, units: &UnitConversion) -> AppProfile {
        AppProfile {
            app: self.app,
            class: self.class,
            zeta: Zeta::from(self.zeta),
            latency: Bounds::new(self.latency_ms[0] * 1e-3, self.latency_ms[1] * 1e-3),
            throughput: Bounds::new(
                units.mbps_to_packets_per_slot(self.throughput_mbps[0]),
                units.mbps_to_packets_per_slot(self.throughput_mbps[1]),
            ),
            drop: Bounds::from(self.drop),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub flow_count: usize,
    #[serde(default)]
    pub mix: AppMix,
    #[serde(default)]
    pub weights: ClassWeights,
    #[serde(default)]
    pub units: UnitConversion,
    pub profiles: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorSection {
    pub k_routes: usize,
    pub bandwidth_levels: usize,
    pub epsilon_0: f64,
    pub a_0: f64,
    pub b_0: f64,
    pub epsilon_min: f64,
    pub lambda: f64,
    pub episodes: usize,
    pub flow_order: FlowOrder,
    pub warm_start: bool,
}

impl Default for AllocatorSection {
    fn default() -> Self {
        let m = MctsParams::default();
        Self {
            k_routes: 4,
            bandwidth_levels: 5,
            epsilon_0: m.epsilon_0,
            a_0: m.a_0,
            b_0: m.b_0,
            epsilon_min: m.epsilon_min,
            lambda: m.lambda,
            episodes: m.episodes,
            flow_order: m.flow_order,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    /// Scheduler used inside training reward simulations.
    pub training_policy: Policy,
    /// Scheduler the baseline allocation runs under.
    pub baseline_policy: Policy,
    pub buffer_packets: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            training_policy: Policy::Lyapunov,
            baseline_policy: Policy::Fifo,
            buffer_packets: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub window_slots: u64,
    pub windows_per_snapshot: usize,
    pub iterations: usize,
    pub resample_flows: bool,
    pub audit: bool,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            window_slots: 10_000,
            windows_per_snapshot: 1,
            iterations: 10,
            resample_flows: true,
            audit: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks every section; also resolves the spec so module-level checks
    /// run before any simulation.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.constellation;
        if c.subgrid_rows == 0 || c.subgrid_cols == 0 || c.subgrid_rows * c.subgrid_cols < 2 {
            return bad("subgrid must contain at least two satellites".into());
        }
        let a = &self.allocator;
        if a.k_routes == 0 {
            return bad("allocator.k_routes must be >= 1".into());
        }
        if a.bandwidth_levels < 2 {
            return bad("allocator.bandwidth_levels must be >= 2".into());
        }
        if self.scheduler.buffer_packets == 0 {
            return bad("scheduler.buffer_packets must be >= 1".into());
        }
        let s = &self.simulator;
        if s.window_slots <= 1 {
            return bad("simulator.window_slots must be > 1".into());
        }
        if s.windows_per_snapshot == 0 || s.iterations == 0 {
            return bad("simulator.windows_per_snapshot and simulator.iterations must be >= 1".into());
        }
        if self.traffic.flow_count == 0 {
            return bad("traffic.flow_count must be >= 1".into());
        }
        let w = &self.traffic.weights;
        if [w.ef, w.af, w.be].iter().any(|x| !(*x > 0.0)) {
            return bad("class weights must be positive".into());
        }
        self.qos.validate()?;
        self.traffic.units.validate()?;
        self.traffic.mix.validate()?;
        let spec = self.to_spec()?;
        spec.shell.validate()?;
        spec.mcts.validate()?;
        spec.snapshots()?;
        Ok(())
    }

    pub fn units(&self) -> UnitConversion {
        self.traffic.units
    }

    pub fn to_spec(&self) -> Result<ScenarioSpec, Error> {
        let c = &self.constellation;
        let units = self.traffic.units;
        let profiles = ProfileSet::new(self.traffic.profiles.iter().map(|p| p.to_profile(&units)))?;
        let a = &self.allocator;
        Ok(ScenarioSpec {
            shell: ShellParams {
                plane_count: c.plane_count,
                sats_per_plane: c.sats_per_plane,
                altitude_km: c.altitude_km,
                inclination_deg: c.inclination_deg,
                phasing_offset: c.phasing_offset,
                earth_radius_km: c.earth_radius_km,
            },
            subgrid: SubgridSpec {
                rows: c.subgrid_rows,
                cols: c.subgrid_cols,
                anchor: SatId {
                    plane: c.anchor_plane,
                    slot: c.anchor_slot,
                },
            },
            duration_s: c.duration_s,
            snapshot_interval_s: c.snapshot_interval_s,
            flow_count: self.traffic.flow_count,
            mix: self.traffic.mix,
            profiles,
            weights: self.traffic.weights,
            scheduling_weights: None,
            k_routes: a.k_routes,
            bandwidth_levels: a.bandwidth_levels,
            mcts: MctsParams {
                epsilon_0: a.epsilon_0,
                a_0: a.a_0,
                b_0: a.b_0,
                epsilon_min: a.epsilon_min,
                lambda: a.lambda,
                episodes: a.episodes,
                flow_order: a.flow_order,
                policy: self.scheduler.training_policy,
                seed: 0,
            },
            baseline_policy: self.scheduler.baseline_policy,
            sim: SimSettings {
                window_slots: self.simulator.window_slots,
                slot_seconds: units.slot_seconds(),
                buffer_packets: self.scheduler.buffer_packets,
                score: self.qos,
                audit: self.simulator.audit,
            },
            windows_per_snapshot: self.simulator.windows_per_snapshot,
            iterations: self.simulator.iterations,
            resample_flows: self.simulator.resample_flows,
            warm_start: a.warm_start,
            seed: self.seed,
        })
    }
}
