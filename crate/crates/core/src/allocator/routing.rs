//! Shortest and k-shortest loop-free paths over a topology snapshot.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::constellation::TopologySnapshot;

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub cost: f64,
}

impl Path {
    fn rank(&self, other: &Path) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.edges.len().cmp(&other.edges.len()))
            .then_with(|| self.edges.cmp(&other.edges))
    }
}

#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then node index.
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sum of edge costs in path order.
pub fn path_cost(edges: &[usize], cost: &impl Fn(usize) -> f64) -> f64 {
    edges.iter().fold(0.0, |acc, &e| acc + cost(e))
}

/// Dijkstra from `src` to `dst` avoiding banned nodes and edges. Edge costs
/// must be nonnegative.
pub fn shortest_path(
    snapshot: &TopologySnapshot,
    src: usize,
    dst: usize,
    cost: &impl Fn(usize) -> f64,
    banned_nodes: &[bool],
    banned_edges: &[bool],
) -> Option<Path> {
    let n = snapshot.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Frontier { cost: 0.0, node: src });
    while let Some(Frontier { cost: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        if node == dst {
            break;
        }
        for &e in snapshot.out_edges(node) {
            let to = snapshot.edges[e].to;
            if banned_edges[e] || banned_nodes[to] || done[to] {
                continue;
            }
            let nd = d + cost(e);
            if nd < dist[to] {
                dist[to] = nd;
                via[to] = Some(e);
                heap.push(Frontier { cost: nd, node: to });
            }
        }
    }
    if !dist[dst].is_finite() {
        return None;
    }
    let mut edges = Vec::new();
    let mut at = dst;
    while at != src {
        let e = via[at]?;
        edges.push(e);
        at = snapshot.edges[e].from;
    }
    edges.reverse();
    let mut nodes = vec![src];
    nodes.extend(edges.iter().map(|&e| snapshot.edges[e].to));
    Some(Path {
        cost: path_cost(&edges, cost),
        nodes,
        edges,
    })
}

/// Up to `k` loop-free paths in nondecreasing cost (Yen). Ties are ordered by
/// hop count, then by edge sequence.
pub fn k_shortest_paths(
    snapshot: &TopologySnapshot,
    src: usize,
    dst: usize,
    k: usize,
    cost: &impl Fn(usize) -> f64,
) -> Vec<Path> {
    let n = snapshot.node_count();
    let m = snapshot.edges.len();
    let mut accepted: Vec<Path> = Vec::new();
    if k == 0 || src == dst {
        return accepted;
    }
    let Some(first) = shortest_path(snapshot, src, dst, cost, &vec![false; n], &vec![false; m]) else {
        return accepted;
    };
    accepted.push(first);
    let mut candidates: Vec<Path> = Vec::new();

    while accepted.len() < k {
        let prev = accepted.last().expect("nonempty").clone();
        for i in 0..prev.edges.len() {
            let spur = prev.nodes[i];
            let root_nodes = &prev.nodes[..=i];
            let mut banned_edges = vec![false; m];
            for p in &accepted {
                if p.nodes.len() > i && p.nodes[..=i] == *root_nodes {
                    banned_edges[p.edges[i]] = true;
                }
            }
            let mut banned_nodes = vec![false; n];
            for &v in &prev.nodes[..i] {
                banned_nodes[v] = true;
            }
            let Some(spur_path) = shortest_path(snapshot, spur, dst, cost, &banned_nodes, &banned_edges) else {
                continue;
            };
            let mut edges = prev.edges[..i].to_vec();
            edges.extend_from_slice(&spur_path.edges);
            let mut nodes = prev.nodes[..i].to_vec();
            nodes.extend_from_slice(&spur_path.nodes);
            let path = Path {
                cost: path_cost(&edges, cost),
                nodes,
                edges,
            };
            if !accepted.iter().chain(&candidates).any(|p| p.edges == path.edges) {
                candidates.push(path);
            }
        }
        let Some(best) = (0..candidates.len()).min_by(|&a, &b| candidates[a].rank(&candidates[b])) else {
            break;
        };
        accepted.push(candidates.swap_remove(best));
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{IslEdge, SatId};

    /// rows x cols lattice with unit horizontal and 1.5 vertical costs.
    fn lattice(rows: usize, cols: usize) -> TopologySnapshot {
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push(IslEdge {
                        from: id(r, c),
                        to: id(r, c + 1),
                        propagation_delay: 1.0,
                    });
                    edges.push(IslEdge {
                        from: id(r, c + 1),
                        to: id(r, c),
                        propagation_delay: 1.0,
                    });
                }
                if r + 1 < rows {
                    edges.push(IslEdge {
                        from: id(r, c),
                        to: id(r + 1, c),
                        propagation_delay: 1.5,
                    });
                    edges.push(IslEdge {
                        from: id(r + 1, c),
                        to: id(r, c),
                        propagation_delay: 1.5,
                    });
                }
            }
        }
        let ids = (0..rows * cols)
            .map(|i| SatId {
                plane: i % cols,
                slot: i / cols,
            })
            .collect();
        TopologySnapshot::new(0.0, ids, vec![[0.0; 3]; rows * cols], edges)
    }

    fn all_simple_paths(g: &TopologySnapshot, src: usize, dst: usize) -> Vec<Vec<usize>> {
        fn dfs(
            g: &TopologySnapshot,
            at: usize,
            dst: usize,
            seen: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if at == dst {
                out.push(cur.clone());
                return;
            }
            for &e in g.out_edges(at) {
                let to = g.edges[e].to;
                if !seen[to] {
                    seen[to] = true;
                    cur.push(e);
                    dfs(g, to, dst, seen, cur, out);
                    cur.pop();
                    seen[to] = false;
                }
            }
        }
        let mut seen = vec![false; g.node_count()];
        seen[src] = true;
        let mut out = Vec::new();
        dfs(g, src, dst, &mut seen, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn yen_matches_exhaustive_enumeration() {
        let g = lattice(4, 4);
        let cost = |e: usize| g.edges[e].propagation_delay + 0.25;
        for (src, dst) in [(0, 15), (0, 5), (3, 12), (1, 14), (6, 9)] {
            let mut oracle: Vec<f64> = all_simple_paths(&g, src, dst)
                .iter()
                .map(|p| path_cost(p, &cost))
                .collect();
            oracle.sort_by(f64::total_cmp);
            let got = k_shortest_paths(&g, src, dst, 6, &cost);
            assert_eq!(got.len(), 6);
            for (p, want) in got.iter().zip(&oracle) {
                assert!((p.cost - want).abs() < 1e-9, "{src}->{dst}: {} vs {want}", p.cost);
                let mut seen = std::collections::HashSet::new();
                assert!(p.nodes.iter().all(|v| seen.insert(*v)), "loop in {:?}", p.nodes);
            }
        }
    }

    #[test]
    fn fewer_paths_than_requested() {
        let g = lattice(1, 2);
        let cost = |e: usize| g.edges[e].propagation_delay;
        assert_eq!(k_shortest_paths(&g, 0, 1, 4, &cost).len(), 1);
        let g = lattice(2, 2);
        let cost = |e: usize| g.edges[e].propagation_delay;
        let paths = k_shortest_paths(&g, 0, 3, 4, &cost);
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.edges.len() == 2));
    }

    #[test]
    fn disconnected_pair_has_no_path() {
        let mut g = lattice(1, 3);
        g = TopologySnapshot::new(0.0, g.node_ids.clone(), g.positions.clone(), g.edges[..2].to_vec());
        let cost = |e: usize| g.edges[e].propagation_delay;
        assert!(k_shortest_paths(&g, 0, 2, 3, &cost).is_empty());
    }
}
