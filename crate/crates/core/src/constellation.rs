//! Walker-delta shell geometry, the +Grid ISL graph and region-level
//! topology snapshots.
//!
//! Satellites are identified by `(plane, slot)`. A full-shell snapshot indexes
//! nodes by `plane * sats_per_plane + slot`; a subgrid snapshot indexes nodes by
//! region (`row * cols + col`), and its `node_ids` record which satellite
//! currently serves each region.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth gravitational parameter, km^3/s^2.
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
/// Speed of light, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

#[derive(Debug, Error, PartialEq)]
pub enum ConstellationError {
    #[error("invalid shell parameters: {0}")]
    InvalidShell(String),
    #[error("negative propagation time {0} s")]
    NegativeTime(f64),
    #[error("subgrid {rows}x{cols} at plane {plane}, slot {slot} lies outside the constellation")]
    AnchorOutOfBounds {
        rows: usize,
        cols: usize,
        plane: usize,
        slot: usize,
    },
    #[error("invalid snapshot schedule: {0}")]
    InvalidSchedule(String),
}

/// One circular Walker-delta shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellParams {
    pub plane_count: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// Walker phasing factor F.
    pub phasing_offset: usize,
    pub earth_radius_km: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            plane_count: 72,
            sats_per_plane: 22,
            altitude_km: 550.0,
            inclination_deg: 53.0,
            phasing_offset: 1,
            earth_radius_km: 6371.0,
        }
    }
}

impl ShellParams {
    pub fn validate(&self) -> Result<(), ConstellationError> {
        let bad = |m: &str| Err(ConstellationError::InvalidShell(m.to_string()));
        if self.plane_count < 1 {
            return bad("plane_count must be >= 1");
        }
        if self.sats_per_plane < 2 {
            return bad("sats_per_plane must be >= 2");
        }
        if !(self.altitude_km > 0.0) {
            return bad("altitude must be positive");
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return bad("inclination must lie in [0, 180] degrees");
        }
        if !(self.earth_radius_km > 0.0) {
            return bad("earth radius must be positive");
        }
        Ok(())
    }

    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH_KM3_S2 / self.orbit_radius_km().powi(3)).sqrt()
    }

    pub fn orbital_period_s(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }

    pub fn satellite_count(&self) -> usize {
        self.plane_count * self.sats_per_plane
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            plane_count: self.plane_count,
            sats_per_plane: self.sats_per_plane,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SatId {
    pub plane: usize,
    pub slot: usize,
}

/// Earth-centered position in km.
pub type Position = [f64; 3];

pub fn distance_km(a: &Position, b: &Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Positions of every satellite at time `t`, ordered by `plane * sats_per_plane + slot`.
pub fn propagate_positions(shell: &ShellParams, t: f64) -> Result<Vec<Position>, ConstellationError> {
    shell.validate()?;
    if t < 0.0 {
        return Err(ConstellationError::NegativeTime(t));
    }
    let radius = shell.orbit_radius_km();
    let inc = shell.inclination_deg.to_radians();
    let (sin_i, cos_i) = inc.sin_cos();
    let planes = shell.plane_count as f64;
    let per_plane = shell.sats_per_plane as f64;
    let advance = shell.mean_motion() * t;

    let mut out = Vec::with_capacity(shell.satellite_count());
    for p in 0..shell.plane_count {
        let raan = 2.0 * PI * p as f64 / planes;
        let (sin_o, cos_o) = raan.sin_cos();
        let phase = 2.0 * PI * shell.phasing_offset as f64 * p as f64 / (planes * per_plane);
        for s in 0..shell.sats_per_plane {
            let u = 2.0 * PI * s as f64 / per_plane + phase + advance;
            let (sin_u, cos_u) = u.sin_cos();
            out.push([
                radius * (cos_o * cos_u - sin_o * sin_u * cos_i),
                radius * (sin_o * cos_u + cos_o * sin_u * cos_i),
                radius * sin_u * sin_i,
            ]);
        }
    }
    Ok(out)
}

/// Plane/slot layout used to wire +Grid ISLs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub plane_count: usize,
    pub sats_per_plane: usize,
}

impl GridSpec {
    pub fn sat_id(&self, index: usize) -> SatId {
        SatId {
            plane: index / self.sats_per_plane,
            slot: index % self.sats_per_plane,
        }
    }

    pub fn index(&self, id: SatId) -> usize {
        id.plane * self.sats_per_plane + id.slot
    }
}

/// A directed ISL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslEdge {
    pub from: usize,
    pub to: usize,
    /// Seconds.
    pub propagation_delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySnapshot {
    pub timestamp: f64,
    pub node_ids: Vec<SatId>,
    pub positions: Vec<Position>,
    pub edges: Vec<IslEdge>,
    /// Packets per slot; every ISL carries exactly one packet per slot.
    pub link_capacity: f64,
    out_edges: Vec<Vec<usize>>,
}

impl TopologySnapshot {
    pub fn new(timestamp: f64, node_ids: Vec<SatId>, positions: Vec<Position>, edges: Vec<IslEdge>) -> Self {
        let mut out_edges = vec![Vec::new(); node_ids.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from].push(i);
        }
        Self {
            timestamp,
            node_ids,
            positions,
            edges,
            link_capacity: 1.0,
            out_edges,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    /// Outgoing edge indices of `node`.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn edge_between(&self, from: usize, to: usize) -> Option<usize> {
        self.out_edges[from].iter().copied().find(|&e| self.edges[e].to == to)
    }

    /// Number of distinct neighbours of `node`.
    pub fn degree(&self, node: usize) -> usize {
        self.out_edges[node].len()
    }

    /// Undirected edge count.
    pub fn bidirectional_edge_count(&self) -> usize {
        self.edges.len() / 2
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &e in &self.out_edges[v] {
                let w = self.edges[e].to;
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Wires each satellite to its intra-plane ring neighbours and to the same slot
/// in the adjacent planes. Delays are Euclidean distance over c.
pub fn build_isl_graph(positions: &[Position], grid: GridSpec, timestamp: f64) -> TopologySnapshot {
    let n = positions.len();
    let node_ids: Vec<SatId> = (0..n).map(|i| grid.sat_id(i)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        let SatId { plane, slot } = node_ids[i];
        let s = grid.sats_per_plane;
        let p = grid.plane_count;
        let mut neighbours = vec![
            SatId {
                plane,
                slot: (slot + 1) % s,
            },
            SatId {
                plane,
                slot: (slot + s - 1) % s,
            },
        ];
        if p > 1 {
            neighbours.push(SatId {
                plane: (plane + 1) % p,
                slot,
            });
            neighbours.push(SatId {
                plane: (plane + p - 1) % p,
                slot,
            });
        }
        neighbours.sort();
        neighbours.dedup();
        for nb in neighbours {
            let j = grid.index(nb);
            if j == i || j >= n {
                continue;
            }
            edges.push(IslEdge {
                from: i,
                to: j,
                propagation_delay: distance_km(&positions[i], &positions[j]) / SPEED_OF_LIGHT_KM_S,
            });
        }
    }
    TopologySnapshot::new(timestamp, node_ids, positions.to_vec(), edges)
}

/// Induced subgraph on `rows` consecutive slots of `cols` consecutive planes,
/// starting at `anchor`. Slots wrap around the ring; planes do not.
/// Node `row * cols + col` of the result is satellite
/// `(anchor.plane + col, anchor.slot + row)`.
pub fn extract_subgrid(
    snapshot: &TopologySnapshot,
    rows: usize,
    cols: usize,
    anchor: SatId,
) -> Result<TopologySnapshot, ConstellationError> {
    let plane_count = snapshot.node_ids.iter().map(|s| s.plane + 1).max().unwrap_or(0);
    let sats_per_plane = snapshot.node_ids.iter().map(|s| s.slot + 1).max().unwrap_or(0);
    let out_of_bounds = rows == 0
        || cols == 0
        || rows * cols > snapshot.node_count()
        || anchor.plane + cols > plane_count
        || anchor.slot >= sats_per_plane
        || rows > sats_per_plane;
    if out_of_bounds {
        return Err(ConstellationError::AnchorOutOfBounds {
            rows,
            cols,
            plane: anchor.plane,
            slot: anchor.slot,
        });
    }

    let mut local = std::collections::HashMap::new();
    for (i, id) in snapshot.node_ids.iter().enumerate() {
        local.insert(*id, i);
    }
    let mut picked = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let id = SatId {
                plane: anchor.plane + col,
                slot: (anchor.slot + row) % sats_per_plane,
            };
            let idx = *local.get(&id).ok_or(ConstellationError::AnchorOutOfBounds {
                rows,
                cols,
                plane: anchor.plane,
                slot: anchor.slot,
            })?;
            picked.push(idx);
        }
    }
    let mut region_of = vec![usize::MAX; snapshot.node_count()];
    for (r, &idx) in picked.iter().enumerate() {
        region_of[idx] = r;
    }
    let mut edges = Vec::new();
    for &idx in &picked {
        for &e in snapshot.out_edges(idx) {
            let edge = snapshot.edges[e];
            if region_of[edge.to] != usize::MAX {
                edges.push(IslEdge {
                    from: region_of[edge.from],
                    to: region_of[edge.to],
                    propagation_delay: edge.propagation_delay,
                });
            }
        }
    }
    Ok(TopologySnapshot::new(
        snapshot.timestamp,
        picked.iter().map(|&i| snapshot.node_ids[i]).collect(),
        picked.iter().map(|&i| snapshot.positions[i]).collect(),
        edges,
    ))
}

/// Which satellite serves each region over `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualNodeMap {
    pub start: f64,
    pub end: f64,
    pub assignment: Vec<SatId>,
}

impl VirtualNodeMap {
    pub fn satellite(&self, region: usize) -> Option<SatId> {
        self.assignment.get(region).copied()
    }
}

/// Subgrid placement for region-level snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubgridSpec {
    pub rows: usize,
    pub cols: usize,
    pub anchor: SatId,
}

/// In-plane slots the serving satellites have advanced by at time `t`.
///
/// Regions keep the argument of latitude their satellite had at t = 0; the
/// satellite trailing in the same plane takes over once it is nearer.
pub fn handover_shift(shell: &ShellParams, t: f64) -> usize {
    let spacing = 2.0 * PI / shell.sats_per_plane as f64;
    let steps = (shell.mean_motion() * t / spacing + 0.5).floor() as usize;
    steps % shell.sats_per_plane
}

/// One region-level snapshot per `interval`, with the virtual-node map in
/// force for that interval.
pub fn snapshot_sequence(
    shell: &ShellParams,
    subgrid: SubgridSpec,
    duration: f64,
    interval: f64,
) -> Result<Vec<(TopologySnapshot, VirtualNodeMap)>, ConstellationError> {
    shell.validate()?;
    if !(interval > 0.0) || duration < interval {
        return Err(ConstellationError::InvalidSchedule(format!(
            "duration {duration} s, interval {interval} s"
        )));
    }
    let count = ((duration / interval) + 1e-9).floor() as usize;
    let grid = shell.grid();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * interval;
        let shift = handover_shift(shell, t);
        let anchor = SatId {
            plane: subgrid.anchor.plane,
            slot: (subgrid.anchor.slot + shell.sats_per_plane - shift) % shell.sats_per_plane,
        };
        let full = build_isl_graph(&propagate_positions(shell, t)?, grid, t);
        let snap = extract_subgrid(&full, subgrid.rows, subgrid.cols, anchor)?;
        let map = VirtualNodeMap {
            start: t,
            end: t + interval,
            assignment: snap.node_ids.clone(),
        };
        out.push((snap, map));
    }
    Ok(out)
}
