//! Weighted undirected graphs in adjacency-array form and Dijkstra variants.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Default)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    label: usize,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on (dist, label, node)
        o.dist
            .total_cmp(&self.dist)
            .then(o.label.cmp(&self.label))
            .then(o.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Graph {
    /// Builds from undirected edges; parallel edges are kept.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Graph {
        let mut deg = vec![0usize; n + 1];
        for &(a, b, _) in edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(a, b, w) in edges {
            targets[fill[a]] = b;
            weights[fill[a]] = w;
            fill[a] += 1;
            targets[fill[b]] = a;
            weights[fill[b]] = w;
            fill[b] += 1;
        }
        Graph {
            offsets,
            targets,
            weights,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.offsets[v]..self.offsets[v + 1]).map(move |k| (self.targets[k], self.weights[k]))
    }

    /// Replaces every weight by `f(a, b, w)`.
    pub fn reweighted<F: FnMut(usize, usize, f64) -> f64>(&self, mut f: F) -> Graph {
        let mut g = self.clone();
        for a in 0..self.n_nodes() {
            for k in self.offsets[a]..self.offsets[a + 1] {
                g.weights[k] = f(a, self.targets[k], self.weights[k]);
            }
        }
        g
    }

    /// Multi-source Dijkstra. Each source carries an initial distance and a
    /// label; equal distances resolve to the smaller label.
    pub fn labelled_distances(&self, sources: &[(usize, f64, usize)]) -> (Vec<f64>, Vec<usize>) {
        let n = self.n_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut label = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &(s, d, l) in sources {
            if d < dist[s] || (d == dist[s] && l < label[s]) {
                dist[s] = d;
                label[s] = l;
                heap.push(Entry { dist: d, label: l, node: s });
            }
        }
        while let Some(Entry { dist: d, label: l, node: v }) = heap.pop() {
            if done[v] || d > dist[v] || (d == dist[v] && l != label[v]) {
                continue;
            }
            done[v] = true;
            for (u, w) in self.neighbors(v) {
                let nd = d + w;
                if !done[u] && (nd < dist[u] || (nd == dist[u] && l < label[u])) {
                    dist[u] = nd;
                    label[u] = l;
                    heap.push(Entry { dist: nd, label: l, node: u });
                }
            }
        }
        (dist, label)
    }

    /// Single-label Dijkstra from weighted seeds that stops once every node
    /// flagged in `wanted` is settled. Unsettled nodes keep `INFINITY`.
    pub fn distances_until(&self, seeds: &[(usize, f64)], wanted: &[bool], mut remaining: usize) -> Vec<f64> {
        let n = self.n_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &(s, d) in seeds {
            if d < dist[s] {
                dist[s] = d;
                heap.push(Entry { dist: d, label: 0, node: s });
            }
        }
        let mut settled = vec![f64::INFINITY; n];
        while let Some(Entry { dist: d, node: v, .. }) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            settled[v] = d;
            if wanted[v] {
                remaining = remaining.saturating_sub(1);
                if remaining == 0 {
                    break;
                }
            }
            for (u, w) in self.neighbors(v) {
                let nd = d + w;
                if !done[u] && nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Entry { dist: nd, label: 0, node: u });
                }
            }
        }
        settled
    }

    /// Shortest path between two nodes with its node sequence.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<(f64, Vec<usize>)> {
        let n = self.n_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Entry { dist: 0.0, label: 0, node: from });
        while let Some(Entry { dist: d, node: v, .. }) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            if v == to {
                break;
            }
            for (u, w) in self.neighbors(v) {
                let nd = d + w;
                if !done[u] && nd < dist[u] {
                    dist[u] = nd;
                    prev[u] = v;
                    heap.push(Entry { dist: nd, label: 0, node: u });
                }
            }
        }
        if !dist[to].is_finite() {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Some((dist[to], path))
    }
}
