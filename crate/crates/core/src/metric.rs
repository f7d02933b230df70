//! Density transport onto the circle domain, clearance weights, the conformal
//! navigation metric and graph shortest paths under that metric.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use nalgebra::Matrix2;

use crate::conformal::MappedMesh;
use crate::error::{Error, Result};
use crate::geometry::{Circle, Complex2};
use crate::mesh::TriMesh;

pub const DEFAULT_MU: f64 = 10.0;
pub const DEFAULT_AGENT_RADIUS: f64 = 0.02;
/// Clearances below this are clamped when weights are sampled on graph edges.
pub const CLEARANCE_FLOOR: f64 = 1e-3;
/// Rings of mesh neighbours linked directly in the length graph.
pub const SHORTCUT_RINGS: usize = 3;

/// Source density over the surface.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityField {
    /// `exp(sin²θ + cosθ) + 0.01r` in the polar coordinates of the source xy plane.
    ExpSinCos,
    Uniform,
    /// One value per mesh vertex.
    Samples(Vec<f64>),
}

pub fn exp_sin_cos(theta: f64, r: f64) -> f64 {
    (theta.sin().powi(2) + theta.cos()).exp() + 0.01 * r
}

impl DensityField {
    /// Per-vertex source values, multiplied by `scale`.
    pub fn source_values(&self, mesh: &TriMesh, scale: f64) -> Result<Vec<f64>> {
        let vals: Vec<f64> = match self {
            DensityField::ExpSinCos => mesh
                .vertices()
                .iter()
                .map(|p| exp_sin_cos(p.y.atan2(p.x), p.x.hypot(p.y)))
                .collect(),
            DensityField::Uniform => vec![1.0; mesh.n_vertices()],
            DensityField::Samples(s) => {
                if s.len() != mesh.n_vertices() {
                    return Err(Error::Config(format!(
                        "density has {} samples for {} vertices",
                        s.len(),
                        mesh.n_vertices()
                    )));
                }
                s.clone()
            }
        };
        if let Some(bad) = vals.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("density at vertex {bad} is negative or not finite")));
        }
        Ok(vals.into_iter().map(|v| v * scale).collect())
    }
}

/// Per-vertex surface length per unit image length, `√(source one-ring area / image one-ring area)`.
pub fn vertex_scale(mm: &MappedMesh) -> Vec<f64> {
    let mesh = &mm.mesh;
    let topo = mesh.topology();
    (0..mesh.n_vertices())
        .map(|v| {
            let mut src = 0.0;
            let mut img = 0.0;
            for &f in &topo.vertex_faces[v] {
                let [a, b, c] = mesh.faces()[f];
                src += mesh.face_area(f);
                img += image_area(mm.image[a], mm.image[b], mm.image[c]);
            }
            if img > 0.0 {
                (src / img).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn image_area(a: Complex2, b: Complex2, c: Complex2) -> f64 {
    let (u, w) = (b - a, c - a);
    0.5 * (u.re * w.im - u.im * w.re)
}

/// Density on the circle domain at every vertex: source value times the
/// area ratio of the inverse map.
pub fn transport_density(rho: &[f64], mm: &MappedMesh) -> Vec<f64> {
    vertex_scale(mm).iter().zip(rho).map(|(s, r)| r * s * s).collect()
}

/// Face-sum of a per-vertex field over the surface.
pub fn surface_mass(mesh: &TriMesh, rho: &[f64]) -> f64 {
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(f, &[a, b, c])| mesh.face_area(f) * (rho[a] + rho[b] + rho[c]) / 3.0)
        .sum()
}

/// Face-sum of a per-vertex field over the image triangulation.
pub fn image_mass(mm: &MappedMesh, rho_hat: &[f64]) -> f64 {
    mm.mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| image_area(mm.image[a], mm.image[b], mm.image[c]) * (rho_hat[a] + rho_hat[b] + rho_hat[c]) / 3.0)
        .sum()
}

/// Linear interpolation of a per-vertex field at `q ∈ Ξ`; zero outside the
/// disk and inside obstacle circles.
pub fn density_at(mm: &MappedMesh, rho_hat: &[f64], q: Complex2) -> f64 {
    match crate::conformal::inverse_map(mm, q) {
        Ok((f, l)) => {
            let [a, b, c] = mm.mesh.faces()[f];
            (l[0] * rho_hat[a] + l[1] * rho_hat[b] + l[2] * rho_hat[c]).max(0.0)
        }
        Err(_) => 0.0,
    }
}

/// `1/(e^{μs} − 1)`, the barrier term of a single clearance.
pub fn barrier(mu: f64, s: f64) -> f64 {
    1.0 / (mu * s).exp_m1()
}

/// Upper bound on `|dσ/ds|` over clearances `s ≥ delta`.
pub fn weight_rate_bound(mu: f64, delta: f64) -> f64 {
    let e = (mu * delta).exp();
    mu * e / ((e - 1.0) * (e - 1.0))
}

/// Upper bound on the Frobenius rate of `(1+σ)²I` per unit neighbour speed,
/// given the clearance floor `delta` and the largest weight along the motion.
pub fn metric_rate_bound(mu: f64, delta: f64, sigma_max: f64) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * (1.0 + sigma_max) * weight_rate_bound(mu, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub mu: f64,
    pub r_a: f64,
    pub obstacles: Vec<Circle>,
}

impl MetricField {
    pub fn new(mu: f64, r_a: f64, obstacles: Vec<Circle>) -> Result<MetricField> {
        if !(mu > 0.0) || !(r_a > 0.0) {
            return Err(Error::Config("metric needs mu > 0 and r_a > 0".into()));
        }
        Ok(MetricField { mu, r_a, obstacles })
    }

    pub fn static_weight(&self, p: Complex2) -> Result<f64> {
        let mut s = 0.0;
        for (k, c) in self.obstacles.iter().enumerate() {
            let d = c.clearance(p);
            if !(d > 0.0) {
                return Err(Error::InsideObstacle { obstacle: k });
            }
            s += barrier(self.mu, d);
        }
        Ok(s)
    }

    /// Static weight plus the neighbour terms of agent `agent`.
    pub fn dynamic_weight(&self, agent: usize, p: Complex2, neighbors: &[(usize, Complex2)]) -> Result<f64> {
        let mut s = self.static_weight(p)?;
        for &(j, q) in neighbors {
            let gap = (p - q).norm() - 2.0 * self.r_a;
            if !(gap > 0.0) {
                return Err(Error::SafetyViolation { a: agent, b: j });
            }
            s += barrier(self.mu, gap);
        }
        Ok(s)
    }

    /// Weight with every clearance clamped below at [`CLEARANCE_FLOOR`];
    /// `None` inside an obstacle circle.
    pub fn sampled_weight(&self, p: Complex2, neighbors: &[Complex2]) -> Option<f64> {
        let mut s = 0.0;
        for c in &self.obstacles {
            let d = c.clearance(p);
            if !(d > 0.0) {
                return None;
            }
            s += barrier(self.mu, d.max(CLEARANCE_FLOOR));
        }
        for q in neighbors {
            let gap = (p - q).norm() - 2.0 * self.r_a;
            s += barrier(self.mu, gap.max(CLEARANCE_FLOOR));
        }
        Some(s)
    }

    /// Smallest clearance of `p` to the obstacle circles, `+∞` without obstacles.
    pub fn obstacle_clearance(&self, p: Complex2) -> f64 {
        self.obstacles.iter().map(|c| c.clearance(p)).fold(f64::INFINITY, f64::min)
    }
}

/// `(1+σ)² diag(1, r²)` in the polar frame at distance `r` from the origin.
pub fn polar_metric(r: f64, sigma: f64) -> Matrix2<f64> {
    let k = (1.0 + sigma).powi(2);
    Matrix2::new(k, 0.0, 0.0, k * r * r)
}

/// The navigation metric in Cartesian form. The polar expression pulls back
/// to a multiple of the identity, which is what is returned, so the origin is
/// not special. `lambda` (the surface-over-image length factor) gives the
/// surface form when present.
pub fn metric_tensor(sigma: f64, lambda: Option<f64>) -> Matrix2<f64> {
    let k = (1.0 + sigma).powi(2) * lambda.map_or(1.0, |l| l * l);
    Matrix2::identity() * k
}

/// A point on the surface as face and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfacePoint {
    pub fn at_image(mm: &MappedMesh, q: Complex2) -> Result<SurfacePoint> {
        let (face, bary) = crate::conformal::inverse_map(mm, q)?;
        Ok(SurfacePoint { face, bary })
    }

    pub fn image(&self, mm: &MappedMesh) -> Complex2 {
        mm.image_point(self.face, self.bary)
    }
}

/// Mesh-vertex graph over the image with edge lengths measured on the
/// surface. Besides mesh edges it links every vertex to the next
/// [`SHORTCUT_RINGS`] − 1 rings.
#[derive(Debug, Clone)]
pub struct LengthGraph {
    nodes: Vec<Complex2>,
    scale: Vec<f64>,
    edges: Vec<[usize; 2]>,
    /// Surface length of each edge before weighting.
    length: Vec<f64>,
    mid: Vec<Complex2>,
    offsets: Vec<usize>,
    adj: Vec<(usize, usize)>,
}

/// Edge weights for one metric evaluation. Infinite weights are never relaxed.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    w: Vec<f64>,
}

/// Distance from a segment to a circle (negative when they overlap).
pub fn segment_clearance(a: Complex2, b: Complex2, c: &Circle) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    let t = if len2 > 0.0 {
        (((c.center - a).re * ab.re + (c.center - a).im * ab.im) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - c.center).norm() - c.radius
}

impl LengthGraph {
    pub fn new(mm: &MappedMesh) -> LengthGraph {
        let mesh = &mm.mesh;
        let topo = mesh.topology();
        let scale = vertex_scale(mm);
        let nodes = mm.image.clone();
        let mut edges: Vec<[usize; 2]> = topo.edges.clone();
        // shortcuts to the second and third rings whose chord stays clear of
        // every obstacle circle
        let mut seen = vec![usize::MAX; nodes.len()];
        let mut frontier = Vec::new();
        let mut next = Vec::new();
        for v in 0..nodes.len() {
            seen[v] = v;
            frontier.clear();
            frontier.push(v);
            for depth in 1..=SHORTCUT_RINGS {
                next.clear();
                for &u in &frontier {
                    for &(w, _) in &topo.vertex_adj[u] {
                        if seen[w] != v {
                            seen[w] = v;
                            next.push(w);
                        }
                    }
                }
                if depth > 1 {
                    for &w in &next {
                        if w > v && mm.obstacles.iter().all(|c| segment_clearance(nodes[v], nodes[w], c) > 0.0) {
                            edges.push([v, w]);
                        }
                    }
                }
                std::mem::swap(&mut frontier, &mut next);
            }
        }
        let length: Vec<f64> = edges
            .iter()
            .map(|&[a, b]| (nodes[a] - nodes[b]).norm() * 0.5 * (scale[a] + scale[b]))
            .collect();
        let mid = edges.iter().map(|&[a, b]| (nodes[a] + nodes[b]) * 0.5).collect();
        let n = nodes.len();
        let mut deg = vec![0usize; n + 1];
        for &[a, b] in &edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut adj = vec![(0, 0); offsets[n]];
        for (e, &[a, b]) in edges.iter().enumerate() {
            adj[fill[a]] = (b, e);
            fill[a] += 1;
            adj[fill[b]] = (a, e);
            fill[b] += 1;
        }
        LengthGraph {
            nodes,
            scale,
            edges,
            length,
            mid,
            offsets,
            adj,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Weights `length × (1 + σ(midpoint))`; edges whose midpoint is inside
    /// an obstacle circle are cut.
    pub fn weights(&self, field: &MetricField, neighbors: &[Complex2]) -> EdgeWeights {
        let obstacle = self.obstacle_sigma(field);
        let parts: Vec<Vec<f64>> = neighbors.iter().map(|&q| self.agent_sigma(field, q)).collect();
        let refs: Vec<&[f64]> = parts.iter().map(|v| v.as_slice()).collect();
        self.combine(&obstacle, &refs)
    }

    /// Obstacle part of σ at every edge midpoint, infinite on cut edges.
    pub fn obstacle_sigma(&self, field: &MetricField) -> Vec<f64> {
        self.mid
            .iter()
            .map(|&m| field.sampled_weight(m, &[]).unwrap_or(f64::INFINITY))
            .collect()
    }

    /// Barrier of one agent at `q` evaluated at every edge midpoint.
    pub fn agent_sigma(&self, field: &MetricField, q: Complex2) -> Vec<f64> {
        self.mid
            .iter()
            .map(|&m| barrier(field.mu, ((m - q).norm() - 2.0 * field.r_a).max(CLEARANCE_FLOOR)))
            .collect()
    }

    /// Sums the obstacle part and the given agent parts into edge weights.
    /// Same summation order as [`MetricField::sampled_weight`].
    pub fn combine(&self, obstacle: &[f64], agents: &[&[f64]]) -> EdgeWeights {
        let w = (0..self.length.len())
            .map(|e| {
                if obstacle[e].is_infinite() {
                    return f64::INFINITY;
                }
                let mut s = obstacle[e];
                for a in agents {
                    s += a[e];
                }
                self.length[e] * (1.0 + s)
            })
            .collect();
        EdgeWeights { w }
    }

    /// Edges from a point inside `face` to the face corners.
    fn attach(&self, mm: &MappedMesh, p: SurfacePoint, field: &MetricField, neighbors: &[Complex2]) -> Vec<(usize, f64)> {
        let q = p.image(mm);
        let sq = p.bary.iter().zip(mm.mesh.faces()[p.face]).map(|(l, v)| l * self.scale[v]).sum::<f64>();
        mm.mesh.faces()[p.face]
            .iter()
            .map(|&v| (v, self.seg_weight(q, sq, self.nodes[v], self.scale[v], field, neighbors)))
            .collect()
    }

    fn seg_weight(&self, a: Complex2, sa: f64, b: Complex2, sb: f64, field: &MetricField, neighbors: &[Complex2]) -> f64 {
        match field.sampled_weight((a + b) * 0.5, neighbors) {
            Some(s) => (a - b).norm() * 0.5 * (sa + sb) * (1.0 + s),
            None => f64::INFINITY,
        }
    }

    fn point_scale(&self, mm: &MappedMesh, p: SurfacePoint) -> f64 {
        p.bary.iter().zip(mm.mesh.faces()[p.face]).map(|(l, v)| l * self.scale[v]).sum()
    }

    /// Dijkstra from a surface point over the weighted graph. Stops once every
    /// vertex flagged in `wanted` is settled (all vertices when `None`);
    /// unsettled vertices keep `+∞`.
    pub fn distances_from(
        &self,
        mm: &MappedMesh,
        p: SurfacePoint,
        field: &MetricField,
        neighbors: &[Complex2],
        weights: &EdgeWeights,
        wanted: Option<&[bool]>,
    ) -> Vec<f64> {
        let seeds = self.attach(mm, p, field, neighbors);
        self.run(&seeds, weights, wanted, None).0
    }

    fn run(
        &self,
        seeds: &[(usize, f64)],
        weights: &EdgeWeights,
        wanted: Option<&[bool]>,
        stop_at: Option<usize>,
    ) -> (Vec<f64>, Vec<usize>) {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut remaining = wanted.map_or(usize::MAX, |w| w.iter().filter(|&&x| x).count());
        let mut heap = BinaryHeap::new();
        for &(s, d) in seeds {
            if d < dist[s] {
                dist[s] = d;
                heap.push(HeapEntry(d, s));
            }
        }
        let mut settled = vec![f64::INFINITY; n];
        while let Some(HeapEntry(d, v)) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            settled[v] = d;
            if stop_at == Some(v) {
                break;
            }
            if let Some(w) = wanted {
                if w[v] {
                    remaining -= 1;
                    if remaining == 0 {
                        break;
                    }
                }
            }
            for &(u, e) in &self.adj[self.offsets[v]..self.offsets[v + 1]] {
                let nd = d + weights.w[e];
                if !done[u] && nd < dist[u] {
                    dist[u] = nd;
                    prev[u] = v;
                    heap.push(HeapEntry(nd, u));
                }
            }
        }
        (settled, prev)
    }

    /// Metric distance between two surface points with its image polyline.
    pub fn length_distance(
        &self,
        mm: &MappedMesh,
        p: SurfacePoint,
        q: SurfacePoint,
        field: &MetricField,
        neighbors: &[Complex2],
    ) -> Result<(f64, Vec<Complex2>)> {
        let weights = self.weights(field, neighbors);
        self.length_distance_with(mm, p, q, field, neighbors, &weights)
    }

    pub fn length_distance_with(
        &self,
        mm: &MappedMesh,
        p: SurfacePoint,
        q: SurfacePoint,
        field: &MetricField,
        neighbors: &[Complex2],
        weights: &EdgeWeights,
    ) -> Result<(f64, Vec<Complex2>)> {
        // run from the lexicographically smaller end so that swapping the
        // arguments gives bit-identical lengths
        let key = |s: &SurfacePoint| (s.face, s.bary.map(f64::to_bits));
        if key(&q) < key(&p) {
            let (d, mut path) = self.length_distance_with(mm, q, p, field, neighbors, weights)?;
            path.reverse();
            return Ok((d, path));
        }
        let (pi, qi) = (p.image(mm), q.image(mm));
        if pi == qi {
            return Ok((0.0, vec![pi]));
        }
        // both points are inserted as extra nodes n and n + 1
        let n = self.nodes.len();
        let mut ext = self.clone();
        ext.nodes.push(pi);
        ext.nodes.push(qi);
        let mut extra: Vec<(usize, usize, f64)> = Vec::new();
        for (v, w) in self.attach(mm, p, field, neighbors) {
            extra.push((n, v, w));
        }
        for (v, w) in self.attach(mm, q, field, neighbors) {
            extra.push((n + 1, v, w));
        }
        if p.face == q.face {
            let w = self.seg_weight(pi, self.point_scale(mm, p), qi, self.point_scale(mm, q), field, neighbors);
            extra.push((n, n + 1, w));
        }
        let mut wts = weights.w.clone();
        let mut adj: Vec<Vec<(usize, usize)>> = (0..n + 2)
            .map(|v| if v < n { self.adj[self.offsets[v]..self.offsets[v + 1]].to_vec() } else { Vec::new() })
            .collect();
        for (a, b, w) in extra {
            let e = wts.len();
            wts.push(w);
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        ext.offsets = vec![0];
        ext.adj.clear();
        for row in adj {
            ext.adj.extend(row);
            ext.offsets.push(ext.adj.len());
        }
        ext.scale.extend([self.point_scale(mm, p), self.point_scale(mm, q)]);
        let (dist, prev) = ext.run(&[(n, 0.0)], &EdgeWeights { w: wts }, None, Some(n + 1));
        if !dist[n + 1].is_finite() {
            return Err(Error::NoPath);
        }
        let mut path = vec![ext.nodes[n + 1]];
        let mut cur = n + 1;
        while cur != n {
            cur = prev[cur];
            path.push(ext.nodes[cur]);
        }
        path.reverse();
        Ok((dist[n + 1], path))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Polar angle in `[0, 2π)`.
pub fn polar_angle(z: Complex2) -> f64 {
    z.im.atan2(z.re).rem_euclid(TAU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_identity(spacing: f64) -> MappedMesh {
        let m = gen::flat_disk(1.0, spacing).unwrap();
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        MappedMesh::new(m, img).unwrap()
    }

    fn field(obs: Vec<Circle>) -> MetricField {
        MetricField::new(DEFAULT_MU, DEFAULT_AGENT_RADIUS, obs).unwrap()
    }

    #[test]
    fn static_weight_closed_form() {
        assert_eq!(field(vec![]).static_weight(Complex2::new(0.3, 0.1)).unwrap(), 0.0);
        let f = field(vec![Circle::new(Complex2::new(0.0, 0.0), 0.2)]);
        let s = f.static_weight(Complex2::new(0.3, 0.0)).unwrap();
        let want = 1.0 / (std::f64::consts::E - 1.0);
        assert!((s - want).abs() < 1e-12, "{s}");
        assert!((s - 0.58198).abs() < 1e-5);
        // at s = 1e-6 the pole gives 1/(μs) − 1/2 ≈ 99999.5, just short of 1e5
        let near = f.static_weight(Complex2::new(0.200001, 0.0)).unwrap();
        assert!((near - 99999.5).abs() < 1.0, "{near}");
        assert!(f.static_weight(Complex2::new(0.2000001, 0.0)).unwrap() > 1e5);
        assert!(matches!(
            f.static_weight(Complex2::new(0.1, 0.0)),
            Err(Error::InsideObstacle { obstacle: 0 })
        ));
    }

    #[test]
    fn dynamic_weight_adds_neighbour_terms() {
        let f = field(vec![Circle::new(Complex2::new(-0.5, 0.0), 0.1)]);
        let p = Complex2::new(0.2, 0.1);
        let s0 = f.static_weight(p).unwrap();
        assert_eq!(f.dynamic_weight(0, p, &[]).unwrap(), s0);
        let q = p + Complex2::new(2.0 * f.r_a + 0.1, 0.0);
        let s = f.dynamic_weight(0, p, &[(1, q)]).unwrap();
        assert!((s - s0 - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-12);
        let touching = Complex2::new(0.0, 2.0 * f.r_a);
        assert!(matches!(
            f.dynamic_weight(0, Complex2::new(0.0, 0.0), &[(3, touching)]),
            Err(Error::SafetyViolation { a: 0, b: 3 })
        ));
    }

    #[test]
    fn barrier_is_monotone_in_mu_past_ln2() {
        for &(m1, m2) in &[(5.0, 10.0), (10.0, 11.0), (2.0, 40.0)] {
            let s0 = std::f64::consts::LN_2 / m1;
            for i in 0..50 {
                let s = s0 + i as f64 * 0.02;
                assert!(barrier(m2, s) <= barrier(m1, s));
            }
        }
    }

    #[test]
    fn metric_tensor_forms() {
        assert_eq!(metric_tensor(0.0, None), Matrix2::identity());
        assert_eq!(metric_tensor(1.0, None), Matrix2::identity() * 4.0);
        assert_eq!(metric_tensor(1.0, Some(0.5)), Matrix2::identity());
        // polar diag(1, r²) pulled back through (r, θ)(x, y)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (x, y, s) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..50.0));
            let r: f64 = f64::hypot(x, y);
            let d = Matrix2::new(x / r, y / r, -y / (r * r), x / (r * r));
            let cart = d.transpose() * polar_metric(r, s) * d;
            let m = metric_tensor(s, None);
            assert!((cart - m).norm() < 1e-9 * m.norm());
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e > 0.0 && e.is_finite()));
        }
    }

    #[test]
    fn transport_is_identity_for_identity_map() {
        let mm = flat_identity(0.1);
        let rho = DensityField::ExpSinCos.source_values(&mm.mesh, 1.0).unwrap();
        let hat = transport_density(&rho, &mm);
        for (a, b) in rho.iter().zip(&hat) {
            assert!((a - b).abs() < 1e-9 * a);
        }
        let z = transport_density(&vec![0.0; rho.len()], &mm);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transport_conserves_mass_under_scaling_map() {
        // z ↦ z²/2 + z/2 style distortion is not conformal; a radial stretch is
        // enough to exercise the area ratio
        let m = gen::flat_disk(1.0, 0.05).unwrap();
        let img: Vec<Complex2> = m
            .vertices()
            .iter()
            .map(|p| {
                let z = Complex2::new(p.x, p.y);
                z * (0.5 + 0.5 * z.norm())
            })
            .collect();
        let mm = MappedMesh::new(m, img).unwrap();
        let rho = DensityField::ExpSinCos.source_values(&mm.mesh, 1.0).unwrap();
        let hat = transport_density(&rho, &mm);
        // face midpoint quadrature on both sides
        let (mut src, mut dst) = (0.0, 0.0);
        for (f, &[a, b, c]) in mm.mesh.faces().iter().enumerate() {
            let p = mm.mesh.face_centroid(f);
            src += exp_sin_cos(p.y.atan2(p.x), p.x.hypot(p.y)) * mm.mesh.face_area(f);
            let (ia, ib, ic) = (mm.image[a], mm.image[b], mm.image[c]);
            let area = 0.5 * ((ib - ia).re * (ic - ia).im - (ib - ia).im * (ic - ia).re);
            dst += (hat[a] + hat[b] + hat[c]) / 3.0 * area;
        }
        assert!((src - dst).abs() < 0.01 * src, "{src} vs {dst}");
    }

    #[test]
    fn flat_distance_close_to_euclidean() {
        let mm = flat_identity(0.04);
        let g = LengthGraph::new(&mm);
        let f = field(vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut pick = || {
                let r = 0.8 * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..TAU);
                Complex2::from_polar(r, t)
            };
            let (a, b) = (pick(), pick());
            let (pa, pb) = (SurfacePoint::at_image(&mm, a).unwrap(), SurfacePoint::at_image(&mm, b).unwrap());
            let (d, path) = g.length_distance(&mm, pa, pb, &f, &[]).unwrap();
            let e = (a - b).norm();
            assert!(d >= e - 1e-12 && d <= 1.05 * e, "{d} vs {e}");
            assert!((path[0] - a).norm() < 1e-12);
            assert!((path.last().unwrap() - b).norm() < 1e-12);
            let (back, _) = g.length_distance(&mm, pb, pa, &f, &[]).unwrap();
            assert_eq!(d, back);
        }
        let p = SurfacePoint::at_image(&mm, Complex2::new(0.1, 0.2)).unwrap();
        assert_eq!(g.length_distance(&mm, p, p, &f, &[]).unwrap().0, 0.0);
    }

    #[test]
    fn paths_avoid_obstacles_and_obey_triangle_inequality() {
        let m = gen::centred_annulus(0.3, 1.0, 14, 72);
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        let mm = MappedMesh::new(m, img).unwrap();
        let g = LengthGraph::new(&mm);
        let f = field(mm.obstacles.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        while pts.len() < 12 {
            let z = Complex2::from_polar(rng.random_range(0.35..0.95), rng.random_range(0.0..TAU));
            if let Ok(p) = SurfacePoint::at_image(&mm, z) {
                pts.push(p);
            }
        }
        let c = mm.obstacles[0];
        let mut d = vec![vec![0.0; pts.len()]; pts.len()];
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let (len, path) = g.length_distance(&mm, pts[i], pts[j], &f, &[]).unwrap();
                d[i][j] = len;
                for w in path.windows(2) {
                    assert!(c.clearance((w[0] + w[1]) * 0.5) > 0.0);
                }
            }
        }
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(d[i][j], d[j][i]);
                for k in 0..pts.len() {
                    assert!(d[i][k] <= d[i][j] + d[j][k] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn metric_rate_bound_holds_along_scripted_neighbour() {
        let f = field(vec![]);
        let p = Complex2::new(0.0, 0.0);
        // neighbour approaches at unit speed down to clearance 0.05
        let (v, dt) = (1.0, 1e-6);
        let delta = 0.05;
        let start = 2.0 * f.r_a + 0.4;
        let end = 2.0 * f.r_a + delta;
        let eta = |t: f64| {
            let q = Complex2::new(start - v * t, 0.0);
            metric_tensor(f.dynamic_weight(0, p, &[(1, q)]).unwrap(), None)
        };
        let sigma_max = f.dynamic_weight(0, p, &[(1, Complex2::new(end, 0.0))]).unwrap();
        let bound = metric_rate_bound(f.mu, delta, sigma_max);
        let steps = 200;
        let horizon = (start - end) / v;
        for i in 0..steps {
            let t = horizon * i as f64 / steps as f64;
            let rate = (eta(t + dt) - eta(t)).norm() / dt;
            assert!(rate <= bound * v, "{rate} > {bound}");
        }
    }
}
