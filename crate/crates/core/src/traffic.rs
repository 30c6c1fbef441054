//! Application profiles, flow generation and aggregation, class weights and
//! Poisson packet arrivals.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("invalid application profile {app}: {reason}")]
    InvalidProfile { app: AppKind, reason: String },
    #[error("invalid application mix: {0}")]
    InvalidMix(String),
    #[error("flow count must be at least 1")]
    NoFlows,
    #[error("need at least two regions to draw distinct endpoints, got {0}")]
    TooFewRegions(usize),
    #[error("invalid unit conversion: {0}")]
    InvalidUnits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AppKind {
    #[serde(rename = "VC")]
    Vc,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "VoD")]
    Vod,
    #[serde(rename = "FT")]
    Ft,
}

impl AppKind {
    pub const ALL: [AppKind; 4] = [AppKind::Vc, AppKind::Ls, AppKind::Vod, AppKind::Ft];

    pub fn label(self) -> &'static str {
        match self {
            AppKind::Vc => "VC",
            AppKind::Ls => "LS",
            AppKind::Vod => "VoD",
            AppKind::Ft => "FT",
        }
    }
}

impl fmt::Display for AppKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// DiffServ-style class. Declaration order is priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    #[serde(rename = "EF")]
    Ef,
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "BE")]
    Be,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 3] = [TrafficClass::Ef, TrafficClass::Af, TrafficClass::Be];

    pub fn label(self) -> &'static str {
        match self {
            TrafficClass::Ef => "EF",
            TrafficClass::Af => "AF",
            TrafficClass::Be => "BE",
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Score weights for latency, throughput and drop rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Zeta {
    pub latency: f64,
    pub throughput: f64,
    pub drop: f64,
}

impl Zeta {
    pub const fn new(latency: f64, throughput: f64, drop: f64) -> Self {
        Self {
            latency,
            throughput,
            drop,
        }
    }

    pub fn is_valid(&self) -> bool {
        let parts = [self.latency, self.throughput, self.drop];
        parts.iter().all(|z| *z >= 0.0 && z.is_finite()) && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

impl From<[f64; 3]> for Zeta {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Zeta> for [f64; 3] {
    fn from(z: Zeta) -> Self {
        [z.latency, z.throughput, z.drop]
    }
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::new(self.min * factor, self.max * factor)
    }
}

impl From<[f64; 2]> for Bounds {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Bounds> for [f64; 2] {
    fn from(b: Bounds) -> Self {
        [b.min, b.max]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppProfile {
    pub app: AppKind,
    pub class: TrafficClass,
    pub zeta: Zeta,
    /// Seconds, end to end.
    pub latency: Bounds,
    /// Packets per slot, per constituent flow.
    pub throughput: Bounds,
    /// Fraction of generated packets.
    pub drop: Bounds,
}

impl AppProfile {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |reason: &str| {
            Err(TrafficError::InvalidProfile {
                app: self.app,
                reason: reason.to_string(),
            })
        };
        if !self.zeta.is_valid() {
            return bad("zeta must be nonnegative and sum to 1");
        }
        if !(self.latency.min < self.latency.max) || self.latency.min < 0.0 {
            return bad("latency bounds must satisfy 0 <= min < max");
        }
        if !(self.throughput.min < self.throughput.max) || !(self.throughput.min > 0.0) {
            return bad("throughput bounds must satisfy 0 < min < max");
        }
        if !(0.0 <= self.drop.min && self.drop.min < self.drop.max && self.drop.max <= 1.0) {
            return bad("drop bounds must satisfy 0 <= min < max <= 1");
        }
        Ok(())
    }
}

/// Profiles for the four application types.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: BTreeMap<AppKind, AppProfile>,
}

impl ProfileSet {
    pub fn new(profiles: impl IntoIterator<Item = AppProfile>) -> Result<Self, TrafficError> {
        let profiles: BTreeMap<_, _> = profiles.into_iter().map(|p| (p.app, p)).collect();
        for app in AppKind::ALL {
            match profiles.get(&app) {
                Some(p) => p.validate()?,
                None => {
                    return Err(TrafficError::InvalidProfile {
                        app,
                        reason: "missing".into(),
                    })
                }
            }
        }
        Ok(Self { profiles })
    }

    pub fn get(&self, app: AppKind) -> &AppProfile {
        &self.profiles[&app]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AppProfile> {
        self.profiles.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub ef: f64,
    pub af: f64,
    pub be: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            ef: 20.0,
            af: 2.0,
            be: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn class_weight(&self, class: TrafficClass) -> f64 {
        match class {
            TrafficClass::Ef => self.ef,
            TrafficClass::Af => self.af,
            TrafficClass::Be => self.be,
        }
    }
}

/// SLA weight of a class under the default weighting.
pub fn class_weight(class: TrafficClass) -> f64 {
    ClassWeights::default().class_weight(class)
}

/// Fraction of flows per application type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppMix {
    pub vc: f64,
    pub ls: f64,
    pub vod: f64,
    pub ft: f64,
}

impl Default for AppMix {
    fn default() -> Self {
        Self {
            vc: 0.2,
            ls: 0.2,
            vod: 0.2,
            ft: 0.4,
        }
    }
}

impl AppMix {
    pub fn fraction(&self, app: AppKind) -> f64 {
        match app {
            AppKind::Vc => self.vc,
            AppKind::Ls => self.ls,
            AppKind::Vod => self.vod,
            AppKind::Ft => self.ft,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let parts = AppKind::ALL.map(|a| self.fraction(a));
        if parts.iter().any(|p| !(*p >= 0.0)) {
            return Err(TrafficError::InvalidMix("fractions must be nonnegative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrafficError::InvalidMix(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Per-type counts for `total` flows by largest remainder; ties go to the
    /// earlier type.
    pub fn apportion(&self, total: usize) -> [usize; 4] {
        let exact = AppKind::ALL.map(|a| self.fraction(a) * total as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(total.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

/// An individual (unaggregated) flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub id: usize,
    pub source: usize,
    pub dest: usize,
    pub app: AppKind,
}

/// Draws `count` flows with app types apportioned by `mix` and endpoints
/// uniform over ordered pairs of distinct regions.
pub fn generate_flows(
    count: usize,
    mix: &AppMix,
    regions: &[usize],
    seed: u64,
) -> Result<Vec<FlowRecord>, TrafficError> {
    mix.validate()?;
    if count == 0 {
        return Err(TrafficError::NoFlows);
    }
    if regions.len() < 2 {
        return Err(TrafficError::TooFewRegions(regions.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mix.apportion(count);
    let mut apps: Vec<AppKind> = AppKind::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&a, n)| std::iter::repeat_n(a, n))
        .collect();
    apps.shuffle(&mut rng);
    let n = regions.len();
    Ok(apps
        .into_iter()
        .enumerate()
        .map(|(id, app)| {
            let s = rng.random_range(0..n);
            let mut d = rng.random_range(0..n - 1);
            if d >= s {
                d += 1;
            }
            FlowRecord {
                id,
                source: regions[s],
                dest: regions[d],
                app,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedFlow {
    pub id: usize,
    pub source: usize,
    pub dest: usize,
    pub profile: AppProfile,
    pub weight: f64,
    /// Number of constituent flows.
    pub beta: usize,
}

impl AggregatedFlow {
    pub fn class(&self) -> TrafficClass {
        self.profile.class
    }

    pub fn zeta(&self) -> Zeta {
        self.profile.zeta
    }

    /// Aggregate throughput bounds: per-flow bounds times beta.
    pub fn throughput_bounds(&self) -> Bounds {
        self.profile.throughput.scaled(self.beta as f64)
    }
}

/// Groups flows by (source, destination, app). Aggregates are ordered by that
/// key and numbered from 0.
pub fn aggregate(flows: &[FlowRecord], profiles: &ProfileSet, weights: &ClassWeights) -> Vec<AggregatedFlow> {
    let mut groups: BTreeMap<(usize, usize, AppKind), usize> = BTreeMap::new();
    for f in flows {
        *groups.entry((f.source, f.dest, f.app)).or_default() += 1;
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(id, ((source, dest, app), beta))| {
            let profile = profiles.get(app).clone();
            AggregatedFlow {
                id,
                source,
                dest,
                weight: weights.class_weight(profile.class),
                profile,
                beta,
            }
        })
        .collect()
}

/// Converts between physical rates and the normalised packets-per-slot unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConversion {
    pub packet_size_bytes: f64,
    pub link_rate_mbps: f64,
}

impl Default for UnitConversion {
    fn default() -> Self {
        Self {
            packet_size_bytes: 1500.0,
            link_rate_mbps: 120.0,
        }
    }
}

impl UnitConversion {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.packet_size_bytes > 0.0) || !(self.link_rate_mbps > 0.0) {
            return Err(TrafficError::InvalidUnits(
                "packet size and link rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Time to put one packet on the wire.
    pub fn slot_seconds(&self) -> f64 {
        self.packet_size_bytes * 8.0 / (self.link_rate_mbps * 1e6)
    }

    pub fn mbps_to_packets_per_slot(&self, mbps: f64) -> f64 {
        mbps / self.link_rate_mbps
    }

    pub fn packets_per_slot_to_mbps(&self, rate: f64) -> f64 {
        rate * self.link_rate_mbps
    }
}

/// Poisson packet source. Draw `k` of the stream belongs to slot `k`.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    mean_rate: f64,
    seed: u64,
    rng: ChaCha8Rng,
    dist: Option<Poisson<f64>>,
    next_slot: u64,
}

impl ArrivalProcess {
    /// Negative or non-finite rates are clamped to zero.
    pub fn new(mean_rate: f64, seed: u64) -> Self {
        let mean_rate = if mean_rate.is_finite() { mean_rate.max(0.0) } else { 0.0 };
        let dist = (mean_rate > 0.0).then(|| Poisson::new(mean_rate).expect("positive finite rate"));
        Self {
            mean_rate,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist,
            next_slot: 0,
        }
    }

    pub fn mean_rate(&self) -> f64 {
        self.mean_rate
    }

    /// Packets generated in `slot`. Sequential slots cost one draw each;
    /// revisiting an earlier slot replays the stream.
    pub fn sample(&mut self, slot: u64) -> u32 {
        let Some(dist) = self.dist else {
            return 0;
        };
        if slot < self.next_slot {
            self.rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.next_slot = 0;
        }
        while self.next_slot < slot {
            dist.sample(&mut self.rng);
            self.next_slot += 1;
        }
        self.next_slot += 1;
        dist.sample(&mut self.rng) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn profiles() -> ProfileSet {
        let p = |app, class, zeta: [f64; 3]| AppProfile {
            app,
            class,
            zeta: zeta.into(),
            latency: Bounds::new(0.1, 0.3),
            throughput: Bounds::new(0.01, 0.05),
            drop: Bounds::new(0.001, 0.05),
        };
        ProfileSet::new([
            p(AppKind::Vc, TrafficClass::Ef, [0.8, 0.1, 0.1]),
            p(AppKind::Ls, TrafficClass::Af, [0.1, 0.45, 0.45]),
            p(AppKind::Vod, TrafficClass::Af, [0.1, 0.45, 0.45]),
            p(AppKind::Ft, TrafficClass::Be, [0.1, 0.8, 0.1]),
        ])
        .unwrap()
    }

    fn regions() -> Vec<usize> {
        (0..16).collect()
    }

    #[test]
    fn default_mix_counts() {
        let flows = generate_flows(10_000, &AppMix::default(), &regions(), 3).unwrap();
        let count = |a| flows.iter().filter(|f| f.app == a).count();
        assert_eq!(
            [
                count(AppKind::Vc),
                count(AppKind::Ls),
                count(AppKind::Vod),
                count(AppKind::Ft)
            ],
            [2000, 2000, 2000, 4000]
        );
        assert!(flows.iter().all(|f| f.source != f.dest));
    }

    #[test]
    fn single_app_mix_and_determinism() {
        let mix = AppMix {
            vc: 1.0,
            ls: 0.0,
            vod: 0.0,
            ft: 0.0,
        };
        let flows = generate_flows(10, &mix, &regions(), 9).unwrap();
        assert!(flows.iter().all(|f| f.app == AppKind::Vc));
        assert_eq!(flows, generate_flows(10, &mix, &regions(), 9).unwrap());
        assert_ne!(
            generate_flows(50, &AppMix::default(), &regions(), 1).unwrap(),
            generate_flows(50, &AppMix::default(), &regions(), 2).unwrap()
        );
    }

    #[test]
    fn apportion_rounds_to_total() {
        let mix = AppMix::default();
        for n in 1..40 {
            assert_eq!(mix.apportion(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn generate_rejects_bad_inputs() {
        let mix = AppMix::default();
        assert_eq!(generate_flows(5, &mix, &[], 0), Err(TrafficError::TooFewRegions(0)));
        assert_eq!(generate_flows(5, &mix, &[3], 0), Err(TrafficError::TooFewRegions(1)));
        assert_eq!(generate_flows(0, &mix, &regions(), 0), Err(TrafficError::NoFlows));
        let bad = AppMix { vc: 0.5, ..mix };
        assert!(matches!(
            generate_flows(5, &bad, &regions(), 0),
            Err(TrafficError::InvalidMix(_))
        ));
    }

    #[test]
    fn aggregate_groups_by_triple() {
        let mut flows = Vec::new();
        for id in 0..3 {
            flows.push(FlowRecord {
                id,
                source: 0,
                dest: 1,
                app: AppKind::Vc,
            });
        }
        for id in 3..5 {
            flows.push(FlowRecord {
                id,
                source: 0,
                dest: 1,
                app: AppKind::Ft,
            });
        }
        let agg = aggregate(&flows, &profiles(), &ClassWeights::default());
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].beta, 3);
        assert_eq!(agg[0].weight, 20.0);
        assert_eq!(agg[1].beta, 2);
        assert_eq!(agg[1].weight, 1.0);
        assert!((agg[0].throughput_bounds().max - 0.15).abs() < 1e-15);
        assert!(aggregate(&[], &profiles(), &ClassWeights::default()).is_empty());
    }

    #[test]
    fn aggregation_bound_on_dense_traffic() {
        let flows = generate_flows(10_000, &AppMix::default(), &regions(), 5).unwrap();
        let agg = aggregate(&flows, &profiles(), &ClassWeights::default());
        let mut triples = std::collections::HashSet::new();
        for f in &flows {
            triples.insert((f.source, f.dest, f.app));
        }
        assert_eq!(agg.len(), triples.len());
        assert!(agg.len() <= 16 * 15 * 4);
        assert_eq!(agg.iter().map(|a| a.beta).sum::<usize>(), 10_000);
    }

    #[test]
    fn class_weights() {
        assert_eq!(class_weight(TrafficClass::Ef), 20.0);
        assert_eq!(class_weight(TrafficClass::Af), 2.0);
        assert_eq!(class_weight(TrafficClass::Be), 1.0);
        let w = ClassWeights {
            ef: 10.0,
            ..Default::default()
        };
        assert_eq!(w.class_weight(TrafficClass::Ef), 10.0);
    }

    #[test]
    fn profile_validation() {
        let mut p = profiles().get(AppKind::Vc).clone();
        p.zeta = Zeta::new(0.5, 0.5, 0.5);
        assert!(p.validate().is_err());
        let mut p = profiles().get(AppKind::Vc).clone();
        p.latency = Bounds::new(0.3, 0.1);
        assert!(p.validate().is_err());
        let mut p = profiles().get(AppKind::Vc).clone();
        p.drop = Bounds::new(0.0, 1.5);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut a = ArrivalProcess::new(0.0, 4);
        assert!((0..1000).all(|t| a.sample(t) == 0));
    }

    #[test]
    fn poisson_mean_within_three_sigma() {
        let mut a = ArrivalProcess::new(0.3, 11);
        let n = 1_000_000u64;
        let total: u64 = (0..n).map(|t| a.sample(t) as u64).sum();
        let mean = total as f64 / n as f64;
        assert!((0.297..=0.303).contains(&mean), "{mean}");
    }

    #[test]
    fn draws_are_indexed_by_slot() {
        let mut a = ArrivalProcess::new(2.5, 77);
        let seq: Vec<u32> = (0..50).map(|t| a.sample(t)).collect();
        let mut b = ArrivalProcess::new(2.5, 77);
        assert_eq!(b.sample(31), seq[31]);
        assert_eq!(b.sample(7), seq[7]);
        assert_eq!(b.sample(8), seq[8]);
    }

    #[test]
    fn unit_conversion() {
        let u = UnitConversion::default();
        assert!((u.slot_seconds() - 1e-4).abs() < 1e-15);
        assert!((u.mbps_to_packets_per_slot(12.0) - 0.1).abs() < 1e-15);
        assert!((u.packets_per_slot_to_mbps(0.1) - 12.0).abs() < 1e-12);
    }
}
