//! Coverage cost over the sectors, its Riemannian gradient, the control law
//! and feasible time stepping on the surface.

use std::f64::consts::TAU;

use nalgebra::Vector2;

use crate::conformal::MappedMesh;
use crate::error::{Error, Result};
use crate::geometry::{barycentric, Complex2};
use crate::metric::{metric_tensor, EdgeWeights, LengthGraph, MetricField, SurfacePoint};
use crate::mesh::NONE;
use crate::partition::sector_widths;

pub const DEFAULT_V_MAX: f64 = 0.05;
/// Slack on the descent test of an accepted step.
pub const DESCENT_SLACK: f64 = 1e-9;
/// Step halvings tried before an agent is declared stuck.
pub const MAX_HALVINGS: usize = 8;

/// Performance function applied to metric distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerformanceFn {
    /// `f(x) = x²`.
    #[default]
    Square,
}

impl PerformanceFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PerformanceFn::Square => x * x,
        }
    }

    pub fn parse(name: &str) -> Result<PerformanceFn> {
        match name {
            "square" => Ok(PerformanceFn::Square),
            other => Err(Error::Config(format!("unknown performance function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub point: SurfacePoint,
    pub image: Complex2,
    pub active: bool,
}

impl AgentState {
    pub fn at_image(mm: &MappedMesh, id: usize, q: Complex2) -> Result<AgentState> {
        let point = SurfacePoint::at_image(mm, q)?;
        Ok(AgentState {
            id,
            point,
            image: point.image(mm),
            active: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub per_agent: Vec<f64>,
}

/// Raw and metric-scaled gradients of one agent's sector integral, both in
/// image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub raw: Vector2<f64>,
    pub scaled: Vector2<f64>,
    /// Weight `σ_i` at the agent.
    pub sigma: f64,
    /// Surface length per unit image length at the agent.
    pub scale: f64,
    /// Finite-difference step used, in image units.
    pub step: f64,
}

/// Everything the cost needs that does not change during a run.
#[derive(Debug, Clone)]
pub struct CoverageModel<'a> {
    pub mm: &'a MappedMesh,
    pub graph: &'a LengthGraph,
    pub field: &'a MetricField,
    pub perf: PerformanceFn,
    face_angle: Vec<f64>,
    face_centroid: Vec<Complex2>,
    /// `ρ(centroid) · area` on the surface.
    face_mass: Vec<f64>,
    /// Static metric length from each corner to the centroid.
    hop: Vec<[f64; 3]>,
    face_edge: Vec<f64>,
    obstacle_sigma: Vec<f64>,
}

/// Barrier values of each active agent on the graph edges, shared by every
/// weight evaluation of one configuration.
#[derive(Debug, Clone)]
pub struct AgentFields {
    parts: Vec<Option<Vec<f64>>>,
}

impl<'a> CoverageModel<'a> {
    /// `rho` is the per-vertex density on the surface.
    pub fn new(mm: &'a MappedMesh, graph: &'a LengthGraph, field: &'a MetricField, rho: &[f64], perf: PerformanceFn) -> Self {
        let mesh = &mm.mesh;
        let scale = graph.scale();
        let mut face_angle = Vec::with_capacity(mesh.n_faces());
        let mut face_centroid = Vec::with_capacity(mesh.n_faces());
        let mut face_mass = Vec::with_capacity(mesh.n_faces());
        let mut hop = Vec::with_capacity(mesh.n_faces());
        let mut face_edge = Vec::with_capacity(mesh.n_faces());
        for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
            let z = (mm.image[a] + mm.image[b] + mm.image[c]) / 3.0;
            face_centroid.push(z);
            face_angle.push(z.im.atan2(z.re).rem_euclid(TAU));
            face_mass.push((rho[a] + rho[b] + rho[c]) / 3.0 * mesh.face_area(f));
            let sc = (scale[a] + scale[b] + scale[c]) / 3.0;
            hop.push([a, b, c].map(|v| {
                let mid = (mm.image[v] + z) * 0.5;
                let s = field.sampled_weight(mid, &[]).unwrap_or(f64::INFINITY);
                (mm.image[v] - z).norm() * 0.5 * (scale[v] + sc) * (1.0 + s)
            }));
            face_edge.push(
                ((mm.image[a] - mm.image[b]).norm() + (mm.image[b] - mm.image[c]).norm() + (mm.image[c] - mm.image[a]).norm())
                    / 3.0,
            );
        }
        CoverageModel {
            mm,
            graph,
            field,
            perf,
            face_angle,
            face_centroid,
            face_mass,
            hop,
            face_edge,
            obstacle_sigma: graph.obstacle_sigma(field),
        }
    }

    pub fn agent_fields(&self, agents: &[AgentState]) -> AgentFields {
        AgentFields {
            parts: agents
                .iter()
                .map(|a| a.active.then(|| self.graph.agent_sigma(self.field, a.image)))
                .collect(),
        }
    }

    /// Edge weights seen by agent `i`: obstacles plus every other active agent.
    pub fn weights_for(&self, fields: &AgentFields, i: usize) -> EdgeWeights {
        let parts: Vec<&[f64]> = fields
            .parts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, p)| p.as_deref())
            .collect();
        self.graph.combine(&self.obstacle_sigma, &parts)
    }

    pub fn total_mass(&self) -> f64 {
        self.face_mass.iter().sum()
    }

    /// Faces with positive mass whose image centroid falls in each sector.
    pub fn sector_faces(&self, phases: &[f64]) -> Vec<Vec<usize>> {
        let n = phases.len();
        let widths = sector_widths(phases);
        let mut out = vec![Vec::new(); n];
        for (f, &ang) in self.face_angle.iter().enumerate() {
            if self.face_mass[f] == 0.0 {
                continue;
            }
            if n == 1 {
                out[0].push(f);
                continue;
            }
            for i in 0..n {
                if (ang - phases[i]).rem_euclid(TAU) < widths[i] {
                    out[i].push(f);
                    break;
                }
            }
        }
        out
    }

    /// `Σ_f f(d(p, c_f)) ρ(c_f) A_f` over `faces` for an agent at `p`.
    pub fn sector_cost(&self, p: SurfacePoint, neighbors: &[Complex2], faces: &[usize], weights: &EdgeWeights) -> f64 {
        if faces.is_empty() {
            return 0.0;
        }
        let mesh = &self.mm.mesh;
        let mut wanted = vec![false; mesh.n_vertices()];
        for &f in faces {
            for v in mesh.faces()[f] {
                wanted[v] = true;
            }
        }
        let dist = self.graph.distances_from(self.mm, p, self.field, neighbors, weights, Some(&wanted));
        let pi = p.image(self.mm);
        let mut total = 0.0;
        for &f in faces {
            let fc = mesh.faces()[f];
            let mut d = (0..3).map(|k| dist[fc[k]] + self.hop[f][k]).fold(f64::INFINITY, f64::min);
            if f == p.face {
                let z = self.face_centroid[f];
                let s = self.field.sampled_weight((pi + z) * 0.5, neighbors).unwrap_or(f64::INFINITY);
                let sc = self.graph.scale();
                let scale = (sc[fc[0]] + sc[fc[1]] + sc[fc[2]]) / 3.0;
                d = d.min((pi - z).norm() * scale * (1.0 + s));
            }
            total += self.perf.eval(d) * self.face_mass[f];
        }
        total
    }

    /// Image positions of the active agents other than `i`.
    fn others(agents: &[AgentState], i: usize) -> Vec<Complex2> {
        agents
            .iter()
            .enumerate()
            .filter(|(j, a)| *j != i && a.active)
            .map(|(_, a)| a.image)
            .collect()
    }

    /// Coverage cost of the active agents, agent `i` of the active list
    /// covering sector `i`.
    pub fn coverage_cost(&self, agents: &[AgentState], phases: &[f64]) -> CostBreakdown {
        let sectors = self.sector_faces(phases);
        self.cost_with(agents, &sectors)
    }

    pub fn cost_with(&self, agents: &[AgentState], sectors: &[Vec<usize>]) -> CostBreakdown {
        self.cost_fields(agents, sectors, &self.agent_fields(agents))
    }

    pub fn cost_fields(&self, agents: &[AgentState], sectors: &[Vec<usize>], fields: &AgentFields) -> CostBreakdown {
        let per_agent: Vec<f64> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if !a.active {
                    return 0.0;
                }
                let nb = Self::others(agents, i);
                let w = self.weights_for(fields, i);
                self.sector_cost(a.point, &nb, &sectors[i], &w)
            })
            .collect();
        CostBreakdown {
            total: per_agent.iter().sum(),
            per_agent,
        }
    }

    /// Whether `q` is strictly inside the feasible set of agent `i`.
    pub fn feasible(&self, q: Complex2, neighbors: &[Complex2]) -> bool {
        self.field.obstacle_clearance(q) > 0.0
            && q.norm() < 1.0
            && neighbors.iter().all(|n| (q - n).norm() > 2.0 * self.field.r_a)
    }

    /// Central differences of agent `i`'s sector integral along the image
    /// axes, then scaled by the inverse metric. The step starts at half the
    /// local edge length and halves while a probe is infeasible.
    pub fn riemannian_gradient(&self, agents: &[AgentState], i: usize, faces: &[usize]) -> Result<Gradient> {
        self.gradient_fields(agents, i, faces, &self.agent_fields(agents))
    }

    pub fn gradient_fields(&self, agents: &[AgentState], i: usize, faces: &[usize], fields: &AgentFields) -> Result<Gradient> {
        let a = agents[i];
        let nb = Self::others(agents, i);
        let w = self.weights_for(fields, i);
        let edge = self.face_edge[a.point.face];
        self.gradient_with_step(&a, &nb, faces, &w, 0.5 * edge, 0.1 * edge)
    }

    pub fn gradient_with_step(
        &self,
        a: &AgentState,
        nb: &[Complex2],
        faces: &[usize],
        w: &EdgeWeights,
        h0: f64,
        h_min: f64,
    ) -> Result<Gradient> {
        let with_ids: Vec<(usize, Complex2)> = nb.iter().enumerate().map(|(k, &q)| (k, q)).collect();
        let sigma = self
            .field
            .dynamic_weight(a.id, a.image, &with_ids)
            .map_err(|_| Error::GradientUnavailable { agent: a.id })?;
        let (raw, h) = central_difference(
            |q| {
                if !self.feasible(q, nb) {
                    return None;
                }
                walk(self.mm, a.point, q).map(|p| self.sector_cost(p, nb, faces, w))
            },
            a.image,
            h0,
            h_min,
        )
        .ok_or(Error::GradientUnavailable { agent: a.id })?;
        let scale = self.point_scale(a.point);
        let k = (scale * (1.0 + sigma)).powi(2);
        Ok(Gradient {
            raw,
            scaled: raw / k,
            sigma,
            scale,
            step: h,
        })
    }

    fn point_scale(&self, p: SurfacePoint) -> f64 {
        let fc = self.mm.mesh.faces()[p.face];
        let sc = self.graph.scale();
        p.bary[0] * sc[fc[0]] + p.bary[1] * sc[fc[1]] + p.bary[2] * sc[fc[2]]
    }

    /// Metric tensor of agent `i` in image coordinates at its position.
    pub fn metric_at(&self, g: &Gradient) -> nalgebra::Matrix2<f64> {
        metric_tensor(g.sigma, Some(g.scale))
    }
}

/// Central differences of `f` along both axes at `x`. The step starts at
/// `h0` and halves while any probe returns `None`; gives up below `h_min`.
pub fn central_difference(
    mut f: impl FnMut(Complex2) -> Option<f64>,
    x: Complex2,
    h0: f64,
    h_min: f64,
) -> Option<(Vector2<f64>, f64)> {
    let mut h = h0;
    while h >= h_min {
        let dirs = [Complex2::new(h, 0.0), Complex2::new(0.0, h)];
        let mut g = [0.0; 2];
        let mut ok = true;
        for (k, d) in dirs.iter().enumerate() {
            match (f(x + d), f(x - d)) {
                (Some(jp), Some(jm)) => g[k] = (jp - jm) / (2.0 * h),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Some((Vector2::new(g[0], g[1]), h));
        }
        h *= 0.5;
    }
    None
}

/// `u = −k_p η⁻¹ ∂J/∂p`, clamped to speed `v_max` in image units.
pub fn control_input(g: &Gradient, k_p: f64, v_max: f64) -> Vector2<f64> {
    let u = -k_p * g.scaled;
    let n = u.norm();
    if n > v_max {
        u * (v_max / n)
    } else {
        u
    }
}

/// Walks the straight image segment from `from` to `to` face by face.
/// `None` when the segment leaves the triangulation.
pub fn walk(mm: &MappedMesh, from: SurfacePoint, to: Complex2) -> Option<SurfacePoint> {
    let mesh = &mm.mesh;
    let topo = mesh.topology();
    let start = from.image(mm);
    let mut f = from.face;
    let mut t_cur = 0.0;
    for _ in 0..mesh.n_faces() + 1 {
        let [a, b, c] = mesh.faces()[f];
        let (pa, pb, pc) = (mm.image[a], mm.image[b], mm.image[c]);
        let lb = barycentric(to, pa, pb, pc)?;
        if lb.iter().all(|&x| x >= -1e-12) {
            let clamped = lb.map(|x| x.max(0.0));
            let s: f64 = clamped.iter().sum();
            return Some(SurfacePoint {
                face: f,
                bary: clamped.map(|x| x / s),
            });
        }
        let la = barycentric(start, pa, pb, pc)?;
        // barycentrics are affine along the segment; leave through the edge
        // whose coordinate first hits zero after the current parameter
        let mut exit: Option<(usize, f64)> = None;
        for k in 0..3 {
            if lb[k] < 0.0 && la[k] > lb[k] {
                let t = la[k] / (la[k] - lb[k]);
                if t >= t_cur - 1e-12 && exit.is_none_or(|(_, te)| t < te) {
                    exit = Some((k, t));
                }
            }
        }
        let (k, t) = exit?;
        let fc = [a, b, c];
        let (u, v) = (fc[(k + 1) % 3], fc[(k + 2) % 3]);
        let e = topo.edge_between(u, v)?;
        let [f0, f1] = topo.edge_faces[e];
        let next = if f0 == f { f1 } else { f0 };
        if next == NONE {
            return None;
        }
        f = next;
        t_cur = t;
    }
    None
}

/// Outcome of one synchronized control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub agents: Vec<AgentState>,
    /// Applied image speed per agent.
    pub speed: Vec<f64>,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Agents with no feasible move after [`MAX_HALVINGS`] halvings.
    pub stuck: Vec<usize>,
    /// Agents kept in place because their move raised the cost.
    pub held: Vec<usize>,
    pub gradient_unavailable: Vec<usize>,
}

/// Moves agent `i` by `dt · scales[i] · u_i` along the image mesh. On
/// failure returns the moving agents that leave the mesh, touch an obstacle
/// or come within `2r_a` of another agent.
pub fn integrate_step(
    model: &CoverageModel,
    agents: &[AgentState],
    velocities: &[Vector2<f64>],
    dt: f64,
    scales: &[f64],
) -> std::result::Result<Vec<AgentState>, Vec<usize>> {
    assert!(dt > 0.0, "time step must be positive");
    let moving = |i: usize| agents[i].active && scales[i] > 0.0 && velocities[i].norm() > 0.0;
    let mut next = agents.to_vec();
    let mut bad = Vec::new();
    for i in 0..agents.len() {
        if !moving(i) {
            continue;
        }
        let a = &agents[i];
        let u = velocities[i];
        let target = a.image + Complex2::new(u.x, u.y) * (dt * scales[i]);
        if model.field.obstacle_clearance(target) <= 0.0 {
            bad.push(i);
            continue;
        }
        match walk(model.mm, a.point, target) {
            Some(p) if model.field.obstacle_clearance(p.image(model.mm)) > 0.0 => {
                next[i].point = p;
                next[i].image = p.image(model.mm);
            }
            _ => bad.push(i),
        }
    }
    if bad.is_empty() {
        for i in 0..next.len() {
            for j in i + 1..next.len() {
                if next[i].active && next[j].active && (next[i].image - next[j].image).norm() <= 2.0 * model.field.r_a {
                    bad.extend([i, j].into_iter().filter(|&k| moving(k)));
                }
            }
        }
        bad.sort_unstable();
        bad.dedup();
    }
    if bad.is_empty() {
        Ok(next)
    } else {
        Err(bad)
    }
}

/// One control step with the partition frozen. Each agent's move is halved
/// until feasible; after [`MAX_HALVINGS`] it is stuck. The joint move is
/// accepted when the total cost does not rise; otherwise agents whose own
/// sector cost rose are held and, if none did, all moves are halved.
pub fn control_step(
    model: &CoverageModel,
    agents: &[AgentState],
    sectors: &[Vec<usize>],
    k_p: f64,
    v_max: f64,
    dt: f64,
) -> StepOutcome {
    let n = agents.len();
    let fields = model.agent_fields(agents);
    let mut velocities = vec![Vector2::zeros(); n];
    let mut unavailable = Vec::new();
    for i in 0..n {
        if !agents[i].active {
            continue;
        }
        match model.gradient_fields(agents, i, &sectors[i], &fields) {
            Ok(g) => velocities[i] = control_input(&g, k_p, v_max),
            Err(_) => unavailable.push(agents[i].id),
        }
    }
    let before = model.cost_fields(agents, sectors, &fields);
    let mut scales: Vec<f64> = velocities.iter().map(|u| if u.norm() > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut halvings = vec![0usize; n];
    let mut stuck = Vec::new();
    let mut held = Vec::new();

    let mut feasible = |scales: &mut Vec<f64>, stuck: &mut Vec<usize>| loop {
        match integrate_step(model, agents, &velocities, dt, scales) {
            Ok(next) => return next,
            Err(bad) => {
                for i in bad {
                    halvings[i] += 1;
                    if halvings[i] > MAX_HALVINGS {
                        scales[i] = 0.0;
                        stuck.push(agents[i].id);
                    } else {
                        scales[i] *= 0.5;
                    }
                }
            }
        }
    };

    let mut candidate = feasible(&mut scales, &mut stuck);
    let mut after = None;
    for _ in 0..=n + MAX_HALVINGS {
        if scales.iter().all(|&s| s == 0.0) {
            break;
        }
        let trial = model.cost_with(&candidate, sectors);
        if trial.total <= before.total + DESCENT_SLACK {
            after = Some(trial.total);
            break;
        }
        let raised: Vec<usize> = (0..n)
            .filter(|&i| scales[i] > 0.0 && trial.per_agent[i] > before.per_agent[i])
            .collect();
        if raised.is_empty() {
            for s in scales.iter_mut() {
                *s *= 0.5;
            }
        } else {
            for i in raised {
                scales[i] = 0.0;
                held.push(agents[i].id);
            }
        }
        candidate = feasible(&mut scales, &mut stuck);
    }
    let cost_after = match after {
        Some(c) => c,
        None => {
            // nothing acceptable: stay put
            for i in 0..n {
                if scales[i] > 0.0 {
                    scales[i] = 0.0;
                    held.push(agents[i].id);
                }
            }
            candidate = agents.to_vec();
            before.total
        }
    };
    StepOutcome {
        agents: candidate,
        speed: velocities.iter().zip(&scales).map(|(u, s)| u.norm() * s).collect(),
        cost_before: before.total,
        cost_after,
        stuck,
        held,
        gradient_unavailable: unavailable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{DensityField, DEFAULT_AGENT_RADIUS, DEFAULT_MU};
    use crate::mesh::gen;
    use crate::Circle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_map(m: crate::TriMesh) -> MappedMesh {
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        MappedMesh::new(m, img).unwrap()
    }

    #[test]
    fn walk_matches_straight_line_on_flat_mesh() {
        let mm = identity_map(gen::flat_disk(1.0, 0.1).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = Complex2::from_polar(rng.random_range(0.0..0.8), rng.random_range(0.0..TAU));
            let b = a + Complex2::from_polar(rng.random_range(0.0..0.3), rng.random_range(0.0..TAU));
            if b.norm() > 0.85 {
                continue;
            }
            let p = SurfacePoint::at_image(&mm, a).unwrap();
            let q = walk(&mm, p, b).unwrap();
            let s = mm.surface_point(q.face, q.bary);
            assert!((s.x - b.re).abs() < 1e-8 && (s.y - b.im).abs() < 1e-8 && s.z.abs() < 1e-12);
        }
        let p = SurfacePoint::at_image(&mm, Complex2::new(0.5, 0.0)).unwrap();
        assert!(walk(&mm, p, Complex2::new(1.5, 0.0)).is_none());
    }

    #[test]
    fn single_agent_flat_disk_cost_matches_polar_integral() {
        let mm = identity_map(gen::flat_disk(1.0, 0.04).unwrap());
        let graph = LengthGraph::new(&mm);
        let field = MetricField::new(DEFAULT_MU, DEFAULT_AGENT_RADIUS, vec![]).unwrap();
        let rho = DensityField::Uniform.source_values(&mm.mesh, 1.0).unwrap();
        let model = CoverageModel::new(&mm, &graph, &field, &rho, PerformanceFn::Square);
        let agent = AgentState::at_image(&mm, 0, Complex2::new(0.0, 0.0)).unwrap();
        let j = model.coverage_cost(&[agent], &[0.0]).total;
        let want = std::f64::consts::PI / 2.0;
        assert!((j - want).abs() < 0.05 * want, "{j}");
        let zero = vec![0.0; rho.len()];
        let model0 = CoverageModel::new(&mm, &graph, &field, &zero, PerformanceFn::Square);
        assert_eq!(model0.coverage_cost(&[agent], &[0.0]).total, 0.0);
    }

    #[test]
    fn control_is_linear_in_gain_and_clamped() {
        let g = Gradient {
            raw: Vector2::new(0.3, -0.4),
            scaled: Vector2::new(0.03, -0.04),
            sigma: 0.0,
            scale: 1.0,
            step: 0.01,
        };
        let u1 = control_input(&g, 0.12, 1e9);
        let u2 = control_input(&g, 0.24, 1e9);
        assert_eq!(u2, u1 * 2.0);
        assert!((control_input(&g, 100.0, 0.05).norm() - 0.05).abs() < 1e-15);
    }

    fn ring_model_parts() -> (MappedMesh, LengthGraph, MetricField, Vec<f64>) {
        let mm = identity_map(gen::centred_annulus(0.25, 1.0, 20, 120));
        let graph = LengthGraph::new(&mm);
        let field = MetricField::new(DEFAULT_MU, DEFAULT_AGENT_RADIUS, mm.obstacles.clone()).unwrap();
        let rho = DensityField::ExpSinCos.source_values(&mm.mesh, 1.0).unwrap();
        (mm, graph, field, rho)
    }

    #[test]
    fn metric_scaled_gradient_matches_inverse_metric() {
        let (mm, graph, field, rho) = ring_model_parts();
        let model = CoverageModel::new(&mm, &graph, &field, &rho, PerformanceFn::Square);
        let phases = [0.0, 2.0, 4.0];
        let sectors = model.sector_faces(&phases);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        while checked < 50 {
            let agents: Vec<AgentState> = (0..3)
                .map(|i| {
                    let t = phases[i] + rng.random_range(0.3..1.7);
                    AgentState::at_image(&mm, i, Complex2::from_polar(rng.random_range(0.4..0.85), t)).unwrap()
                })
                .collect();
            let i = rng.random_range(0..3);
            let Ok(g) = model.riemannian_gradient(&agents, i, &sectors[i]) else { continue };
            let inv = model.metric_at(&g).try_inverse().unwrap();
            let want = inv * g.raw;
            assert!((g.scaled - want).norm() <= 1e-3 * want.norm().max(1e-300));
            // both vanish together
            assert_eq!(g.raw.norm() == 0.0, g.scaled.norm() == 0.0);
            checked += 1;
        }
    }

    #[test]
    fn control_decays_near_obstacle() {
        let (mm, graph, field, rho) = ring_model_parts();
        let model = CoverageModel::new(&mm, &graph, &field, &rho, PerformanceFn::Square);
        let sectors = model.sector_faces(&[0.0]);
        let r_in = mm.obstacles[0].radius;
        let mut speeds = Vec::new();
        for k in 0..10 {
            let clearance = 0.2 * (0.6f64).powi(k);
            let a = AgentState::at_image(&mm, 0, Complex2::from_polar(r_in + clearance, 0.3)).unwrap();
            let nb: Vec<Complex2> = Vec::new();
            let w = graph.weights(&field, &nb);
            // fixed small probe so the samples close to the wall stay feasible
            let g = model.gradient_with_step(&a, &nb, &sectors[0], &w, 1e-3, 1e-4).unwrap();
            speeds.push(control_input(&g, 0.12, f64::INFINITY).norm());
        }
        let tail = &speeds[speeds.len() - 5..];
        assert!(tail.windows(2).all(|w| w[1] < w[0]), "{speeds:?}");
    }

    #[test]
    fn central_difference_is_second_order_on_smooth_costs() {
        let f = |z: Complex2| (1.3 * z.re).sin() * (0.7 * z.im).exp() + z.re * z.im * z.im;
        let x = Complex2::new(0.4, -0.2);
        let exact = Vector2::new(
            1.3 * (1.3 * x.re).cos() * (0.7 * x.im).exp() + x.im * x.im,
            0.7 * (1.3 * x.re).sin() * (0.7 * x.im).exp() + 2.0 * x.re * x.im,
        );
        let g = |h: f64| central_difference(|z| Some(f(z)), x, h, h).unwrap().0;
        let h = 0.1;
        let (g1, g2, g3) = (g(h), g(h / 2.0), g(h / 4.0));
        let order = ((g1 - g2).norm() / (g2 - g3).norm()).log2();
        assert!(order >= 1.7, "{order}");
        assert!((g3 - exact).norm() < 1e-3);
        // probes outside the domain shrink the step
        let (_, used) = central_difference(|z| (z.re < 0.42).then(|| f(z)), x, 0.1, 1e-3).unwrap();
        assert!(used <= 0.02);
        assert!(central_difference(|_| None::<f64>, x, 0.1, 1e-3).is_none());
    }

    #[test]
    fn accepted_steps_descend_and_stay_feasible() {
        let (mm, graph, field, rho) = ring_model_parts();
        let model = CoverageModel::new(&mm, &graph, &field, &rho, PerformanceFn::Square);
        let phases = [0.0, 2.1, 4.2];
        let sectors = model.sector_faces(&phases);
        let mut agents: Vec<AgentState> = (0..3)
            .map(|i| AgentState::at_image(&mm, i, Complex2::from_polar(0.3, phases[i] + 0.2)).unwrap())
            .collect();
        let mut last = model.cost_with(&agents, &sectors).total;
        for _ in 0..15 {
            let out = control_step(&model, &agents, &sectors, 0.12, 0.05, 0.1);
            assert!(out.cost_after <= out.cost_before + DESCENT_SLACK);
            assert!((out.cost_before - last).abs() < 1e-9 * last);
            agents = out.agents;
            last = out.cost_after;
            for (i, a) in agents.iter().enumerate() {
                assert!(field.obstacle_clearance(a.image) > 0.0);
                for b in &agents[i + 1..] {
                    assert!((a.image - b.image).norm() > 2.0 * field.r_a);
                }
            }
        }
        // u = 0 leaves the state alone
        let still = integrate_step(&model, &agents, &[Vector2::zeros(); 3], 0.1, &[1.0; 3]).unwrap();
        assert_eq!(still, agents);
        let _ = Circle::new(Complex2::new(0.0, 0.0), 1.0);
    }
}
