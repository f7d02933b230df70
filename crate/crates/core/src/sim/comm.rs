//! Cyclic communication graph, message accounting and leader-following
//! consensus on the virtual centre.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::Complex2;

/// Undirected graph over agent slots `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adj: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Cycle over `n` agents in phase order. Two agents share one edge.
    pub fn cycle(n: usize) -> CommGraph {
        let mut adj = vec![Vec::new(); n];
        if n == 2 {
            adj[0].push(1);
            adj[1].push(0);
        } else if n > 2 {
            for i in 0..n {
                adj[i].push((i + n - 1) % n);
                adj[i].push((i + 1) % n);
                adj[i].sort_unstable();
            }
        }
        CommGraph { adj }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> CommGraph {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        CommGraph { adj }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    fn bfs(&self, s: usize) -> Vec<usize> {
        let mut d = vec![usize::MAX; self.len()];
        d[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &self.adj[u] {
                if d[v] == usize::MAX {
                    d[v] = d[u] + 1;
                    q.push_back(v);
                }
            }
        }
        d
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.bfs(0).iter().all(|&d| d != usize::MAX)
    }

    /// Hop diameter; `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.len() {
            for d in self.bfs(s) {
                if d == usize::MAX {
                    return None;
                }
                best = best.max(d);
            }
        }
        Some(best)
    }
}

/// Counts of in-process messages, by purpose.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLog {
    pub workload: u64,
    pub position: u64,
    pub consensus: u64,
}

impl MessageLog {
    pub fn total(&self) -> u64 {
        self.workload + self.position + self.consensus
    }
}

/// Each agent sends its value to its successor on the cycle and receives its
/// predecessor's. Returns the received values in slot order.
pub fn pass_to_successor(values: &[f64], log: &mut MessageLog) -> Vec<f64> {
    let n = values.len();
    let mut inbox = vec![0.0; n];
    for (i, &v) in values.iter().enumerate() {
        inbox[(i + 1) % n] = v;
        log.workload += 1;
    }
    inbox
}

/// Result of the consensus iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    /// Iterations until every estimate is within the tolerance.
    pub iterations: usize,
    /// Largest error before the first and after every iteration.
    pub max_error: Vec<f64>,
    pub estimates: Vec<Complex2>,
}

pub const CONSENSUS_TOLERANCE: f64 = 1e-6;
const CONSENSUS_MAX_ITER: usize = 100_000;

/// `ĉ_j ← (deg_j + 1)⁻¹ (ĉ_j + Σ_l ĉ_l)` with the boundary agents pinned to
/// `true_center`. The others start from the origin.
pub fn synchronize_virtual_center(
    graph: &CommGraph,
    boundary_agents: &[usize],
    true_center: Complex2,
    log: &mut MessageLog,
) -> Result<ConsensusTrace> {
    let n = graph.len();
    if !graph.is_connected() || (n > 0 && boundary_agents.is_empty()) {
        return Err(Error::NoConsensus);
    }
    let mut pinned = vec![false; n];
    for &b in boundary_agents {
        pinned[b] = true;
    }
    let mut est: Vec<Complex2> = (0..n)
        .map(|j| if pinned[j] { true_center } else { Complex2::new(0.0, 0.0) })
        .collect();
    let err = |e: &[Complex2]| e.iter().map(|c| (c - true_center).norm()).fold(0.0, f64::max);
    let mut max_error = vec![err(&est)];
    let mut iterations = 0;
    while *max_error.last().unwrap() >= CONSENSUS_TOLERANCE {
        if iterations == CONSENSUS_MAX_ITER {
            return Err(Error::NoConsensus);
        }
        let next: Vec<Complex2> = (0..n)
            .map(|j| {
                if pinned[j] {
                    return true_center;
                }
                let nb = graph.neighbors(j);
                log.consensus += nb.len() as u64;
                let s: Complex2 = nb.iter().map(|&l| est[l]).sum();
                (est[j] + s) / (nb.len() + 1) as f64
            })
            .collect();
        est = next;
        iterations += 1;
        max_error.push(err(&est));
    }
    Ok(ConsensusTrace {
        iterations,
        max_error,
        estimates: est,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_shape() {
        let g = CommGraph::cycle(6);
        assert_eq!(g.neighbors(0), &[1, 5]);
        assert_eq!(g.diameter(), Some(3));
        assert_eq!(CommGraph::cycle(2).neighbors(0), &[1]);
        assert_eq!(CommGraph::cycle(7).diameter(), Some(3));
        let split = CommGraph::from_edges(4, &[(0, 1), (2, 3)]);
        assert!(!split.is_connected());
        assert_eq!(split.diameter(), None);
    }

    #[test]
    fn successor_exchange_counts_messages() {
        let mut log = MessageLog::default();
        assert_eq!(pass_to_successor(&[1.0, 2.0, 3.0], &mut log), vec![3.0, 1.0, 2.0]);
        assert_eq!(log.workload, 3);
    }

    #[test]
    fn consensus_cases() {
        let c = Complex2::new(0.1, -0.2);
        let g = CommGraph::cycle(6);
        let mut log = MessageLog::default();
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(synchronize_virtual_center(&g, &all, c, &mut log).unwrap().iterations, 0);

        let t = synchronize_virtual_center(&g, &[2], c, &mut log).unwrap();
        assert!(t.iterations > 0);
        assert!(t.max_error.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.estimates.iter().all(|e| (e - c).norm() < CONSENSUS_TOLERANCE));
        assert!(log.consensus > 0);

        let split = CommGraph::from_edges(4, &[(0, 1), (2, 3)]);
        assert!(matches!(synchronize_virtual_center(&split, &[0], c, &mut log), Err(Error::NoConsensus)));
    }
}
