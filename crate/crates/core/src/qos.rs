//! QoS score mapping, the composite per-flow score, the weighted network
//! objective and the QoE fairness index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{AggregatedFlow, Zeta};

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("score interval requires lo < hi, got lo={lo}, hi={hi}")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("objective needs at least one flow")]
    NoFlows,
    #[error("flow and score counts differ ({flows} flows, {scores} scores)")]
    LengthMismatch { flows: usize, scores: usize },
    #[error("invalid score bounds: omega_max must exceed omega_min")]
    InvalidBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBounds {
    pub omega_max: f64,
    pub omega_min: f64,
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self {
            omega_max: 5.0,
            omega_min: 1.0,
        }
    }
}

impl ScoreBounds {
    pub fn validate(&self) -> Result<(), QosError> {
        if self.omega_max > self.omega_min {
            Ok(())
        } else {
            Err(QosError::InvalidBounds)
        }
    }

    pub fn span(&self) -> f64 {
        self.omega_max - self.omega_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Latency, drop rate.
    LowerIsBetter,
    /// Throughput.
    HigherIsBetter,
}

/// Clamped piecewise-linear map of `value` onto `[omega_min, omega_max]`.
pub fn map_score(
    value: f64,
    lo: f64,
    hi: f64,
    orientation: Orientation,
    bounds: &ScoreBounds,
) -> Result<f64, QosError> {
    if !(lo < hi) {
        return Err(QosError::EmptyInterval { lo, hi });
    }
    Ok(map_score_unchecked(value, lo, hi, orientation, bounds))
}

/// `map_score` for callers that already hold a valid interval.
#[inline]
pub(crate) fn map_score_unchecked(value: f64, lo: f64, hi: f64, orientation: Orientation, bounds: &ScoreBounds) -> f64 {
    // Fraction of the way from worst to best.
    let goodness = match orientation {
        Orientation::LowerIsBetter => {
            if value <= lo {
                1.0
            } else if value >= hi {
                0.0
            } else {
                (hi - value) / (hi - lo)
            }
        }
        Orientation::HigherIsBetter => {
            if value >= hi {
                1.0
            } else if value <= lo {
                0.0
            } else {
                (value - lo) / (hi - lo)
            }
        }
    };
    bounds.omega_min + goodness * bounds.span()
}

pub fn composite_score(omega_delta: f64, omega_tau: f64, omega_l: f64, zeta: &Zeta) -> f64 {
    zeta.latency * omega_delta + zeta.throughput * omega_tau + zeta.drop * omega_l
}

/// Weighted score sum normalised by `omega_max * sum(w)`.
pub fn objective(flows: &[AggregatedFlow], scores: &[f64], bounds: &ScoreBounds) -> Result<f64, QosError> {
    let weights: Vec<f64> = flows.iter().map(|f| f.weight).collect();
    weighted_objective(&weights, scores, bounds)
}

pub fn weighted_objective(weights: &[f64], scores: &[f64], bounds: &ScoreBounds) -> Result<f64, QosError> {
    if weights.is_empty() {
        return Err(QosError::NoFlows);
    }
    if weights.len() != scores.len() {
        return Err(QosError::LengthMismatch {
            flows: weights.len(),
            scores: scores.len(),
        });
    }
    let num: f64 = weights.iter().zip(scores).map(|(w, s)| w * s).sum();
    let den: f64 = bounds.omega_max * weights.iter().sum::<f64>();
    Ok(num / den)
}

/// QoE fairness index `1 - 2 sigma / (omega_max - omega_min)` with sigma the
/// population standard deviation of the scores. Empty input scores 1.
pub fn fairness_index(scores: &[f64], bounds: &ScoreBounds) -> f64 {
    if scores.is_empty() {
        return 1.0;
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    1.0 - 2.0 * var.sqrt() / bounds.span()
}

/// Measured performance of one aggregated flow over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowWindow {
    pub flow_id: usize,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Seconds; `None` when nothing was delivered.
    pub avg_latency: Option<f64>,
    /// Delivered packets per slot.
    pub throughput: f64,
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub window_slots: u64,
    pub slot_seconds: f64,
    pub flows: Vec<FlowWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowScore {
    pub omega_delta: f64,
    pub omega_tau: f64,
    pub omega_l: f64,
    pub total: f64,
}

/// Scores one flow's window. A flow with no deliveries gets `omega_min` for
/// latency.
pub fn score_flow(flow: &AggregatedFlow, m: &FlowWindow, bounds: &ScoreBounds) -> FlowScore {
    let p = &flow.profile;
    let omega_delta = match m.avg_latency {
        Some(d) => map_score_unchecked(d, p.latency.min, p.latency.max, Orientation::LowerIsBetter, bounds),
        None => bounds.omega_min,
    };
    let tau = flow.throughput_bounds();
    let omega_tau = map_score_unchecked(m.throughput, tau.min, tau.max, Orientation::HigherIsBetter, bounds);
    let omega_l = map_score_unchecked(m.drop_rate, p.drop.min, p.drop.max, Orientation::LowerIsBetter, bounds);
    FlowScore {
        omega_delta,
        omega_tau,
        omega_l,
        total: composite_score(omega_delta, omega_tau, omega_l, &p.zeta),
    }
}

impl WindowMetrics {
    /// Scores in the order of `flows`, matched by position.
    pub fn scores(&self, flows: &[AggregatedFlow], bounds: &ScoreBounds) -> Vec<FlowScore> {
        flows
            .iter()
            .zip(&self.flows)
            .map(|(f, m)| score_flow(f, m, bounds))
            .collect()
    }
}
