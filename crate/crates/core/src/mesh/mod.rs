//! Triangle meshes of multiply-connected surfaces with labelled boundary loops.

pub mod gen;
pub mod io;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Marker for a missing face on one side of an edge.
pub const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LoopLabel {
    Outer,
    Obstacle(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    pub label: LoopLabel,
    /// Vertices in the direction of the boundary half-edges.
    pub vertices: Vec<usize>,
}

/// Adjacency tables derived from the face list.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    /// Undirected edges with `e[0] < e[1]`.
    pub edges: Vec<[usize; 2]>,
    /// Faces on either side of each edge; `NONE` on the boundary.
    pub edge_faces: Vec<[usize; 2]>,
    /// `face_edges[f][j]` joins `f[j]` and `f[(j+1)%3]`.
    pub face_edges: Vec<[usize; 3]>,
    /// Sorted `(neighbour, edge)` pairs per vertex.
    pub vertex_adj: Vec<Vec<(usize, usize)>>,
    pub vertex_faces: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(n_vertices: usize, faces: &[[usize; 3]]) -> Result<Topology> {
        let mut map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut edge_faces: Vec<[usize; 2]> = Vec::new();
        let mut face_edges = Vec::with_capacity(faces.len());
        let mut vertex_faces = vec![Vec::new(); n_vertices];
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n_vertices) {
                return Err(Error::InvalidMesh(format!("face {fi} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
            let mut fe = [0; 3];
            for j in 0..3 {
                let (a, b) = (f[j], f[(j + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = *map.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_faces.push([NONE, NONE]);
                    edges.len() - 1
                });
                // slot 0 holds the face that traverses the edge low -> high
                let slot = if a < b { 0 } else { 1 };
                if edge_faces[e][slot] != NONE {
                    let other = edge_faces[e][1 - slot];
                    return Err(Error::InvalidMesh(if other == NONE {
                        format!("faces {} and {fi} disagree on orientation", edge_faces[e][slot])
                    } else {
                        format!("edge {a}-{b} has more than two faces")
                    }));
                }
                edge_faces[e][slot] = fi;
                fe[j] = e;
            }
            face_edges.push(fe);
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }
        let mut vertex_adj = vec![Vec::new(); n_vertices];
        for (e, &[a, b]) in edges.iter().enumerate() {
            vertex_adj[a].push((b, e));
            vertex_adj[b].push((a, e));
        }
        for adj in &mut vertex_adj {
            adj.sort_unstable();
        }
        Ok(Topology {
            edges,
            edge_faces,
            face_edges,
            vertex_adj,
            vertex_faces,
        })
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        let adj = &self.vertex_adj[a];
        adj.binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| adj[i].1)
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edge_faces[e][0] == NONE || self.edge_faces[e][1] == NONE
    }

    pub fn euler_characteristic(&self, n_vertices: usize, n_faces: usize) -> i64 {
        n_vertices as i64 - self.edges.len() as i64 + n_faces as i64
    }
}

/// Directed boundary half-edges `(a, b)` of a face list, keyed by tail vertex.
fn boundary_half_edges(faces: &[[usize; 3]], topo: &Topology) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (e, ef) in topo.edge_faces.iter().enumerate() {
        let f = if ef[0] != NONE && ef[1] == NONE {
            ef[0]
        } else if ef[1] != NONE && ef[0] == NONE {
            ef[1]
        } else {
            continue;
        };
        let face = faces[f];
        let [lo, hi] = topo.edges[e];
        for j in 0..3 {
            let (a, b) = (face[j], face[(j + 1) % 3]);
            if (a, b) == (lo, hi) || (a, b) == (hi, lo) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Boundary cycles traced along the face orientation. Fails when a vertex
/// carries more than two boundary edges (a pinch).
pub fn trace_boundary_loops(faces: &[[usize; 3]], topo: &Topology) -> Result<Vec<Vec<usize>>> {
    let half = boundary_half_edges(faces, topo);
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in &half {
        if next.insert(a, b).is_some() {
            return Err(Error::InvalidMesh(format!("boundary pinches at vertex {a}")));
        }
    }
    let mut seen: BTreeMap<usize, bool> = next.keys().map(|&k| (k, false)).collect();
    let mut loops = Vec::new();
    let starts: Vec<usize> = next.keys().copied().collect();
    for s in starts {
        if seen[&s] {
            continue;
        }
        let mut cyc = vec![s];
        seen.insert(s, true);
        let mut cur = next[&s];
        while cur != s {
            if seen.get(&cur).copied().unwrap_or(true) {
                return Err(Error::InvalidMesh(format!("boundary broken at vertex {cur}")));
            }
            seen.insert(cur, true);
            cyc.push(cur);
            cur = *next
                .get(&cur)
                .ok_or_else(|| Error::InvalidMesh(format!("open boundary at vertex {cur}")))?;
        }
        loops.push(cyc);
    }
    Ok(loops)
}

/// Rotates a cycle so that it starts at its smallest vertex.
fn canonical_cycle(c: &[usize]) -> Vec<usize> {
    let start = c
        .iter()
        .enumerate()
        .min_by_key(|(_, &v)| v)
        .map(|(i, _)| i)
        .unwrap_or(0);
    c[start..].iter().chain(&c[..start]).copied().collect()
}

/// Number of connected components of the face graph (edge adjacency).
pub fn face_components(faces: &[usize], topo: &Topology) -> usize {
    let set: BTreeMap<usize, usize> = faces.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let mut comp = vec![usize::MAX; faces.len()];
    let mut count = 0;
    for s in 0..faces.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = count;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for &e in &topo.face_edges[faces[i]] {
                for &g in &topo.edge_faces[e] {
                    if g == NONE {
                        continue;
                    }
                    if let Some(&j) = set.get(&g) {
                        if comp[j] == usize::MAX {
                            comp[j] = count;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count += 1;
    }
    count
}

/// Checks that the faces around every vertex form a single fan.
fn check_vertex_fans(n_vertices: usize, faces: &[[usize; 3]], topo: &Topology) -> Result<()> {
    for v in 0..n_vertices {
        let vf = &topo.vertex_faces[v];
        if vf.is_empty() {
            return Err(Error::InvalidMesh(format!("vertex {v} is isolated")));
        }
        let mut reached = vec![false; vf.len()];
        reached[0] = true;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let f = vf[i];
            for (j, &e) in topo.face_edges[f].iter().enumerate() {
                let (a, b) = (faces[f][j], faces[f][(j + 1) % 3]);
                if a != v && b != v {
                    continue;
                }
                for &g in &topo.edge_faces[e] {
                    if g == NONE || g == f {
                        continue;
                    }
                    if let Some(k) = vf.iter().position(|&x| x == g) {
                        if !reached[k] {
                            reached[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(Error::InvalidMesh(format!("vertex {v} is non-manifold")));
        }
    }
    Ok(())
}

/// Embedded surface mesh with one outer loop and `n` obstacle loops.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    loops: Vec<BoundaryLoop>,
    samples: Option<Vec<f64>>,
    topo: Topology,
    vertex_loop: Vec<Option<usize>>,
}

impl TriMesh {
    /// Validates and builds a mesh. Loops may be given in either direction;
    /// they are stored following the boundary half-edges, outer loop first,
    /// obstacles in label order.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        loops: Vec<BoundaryLoop>,
        samples: Option<Vec<f64>>,
    ) -> Result<TriMesh> {
        if faces.is_empty() {
            return Err(Error::InvalidMesh("no faces".into()));
        }
        if vertices.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        if let Some(s) = &samples {
            if s.len() != vertices.len() {
                return Err(Error::InvalidMesh("sample count differs from vertex count".into()));
            }
        }
        let topo = Topology::build(vertices.len(), &faces)?;
        check_vertex_fans(vertices.len(), &faces, &topo)?;
        let all: Vec<usize> = (0..faces.len()).collect();
        if face_components(&all, &topo) != 1 {
            return Err(Error::InvalidMesh("mesh is not connected".into()));
        }
        let traced = trace_boundary_loops(&faces, &topo)?;
        let mut by_key: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for (i, c) in traced.iter().enumerate() {
            by_key.insert(canonical_cycle(c), i);
        }
        let mut used = vec![false; traced.len()];
        let mut labelled: Vec<BoundaryLoop> = Vec::new();
        for l in loops {
            if l.vertices.len() < 3 {
                return Err(Error::InvalidMesh(format!("{:?} loop has fewer than 3 vertices", l.label)));
            }
            let fwd = canonical_cycle(&l.vertices);
            let mut rev_src = l.vertices.clone();
            rev_src.reverse();
            let rev = canonical_cycle(&rev_src);
            let hit = by_key.get(&fwd).or_else(|| by_key.get(&rev)).copied();
            let Some(i) = hit else {
                return Err(Error::InvalidMesh(format!("{:?} loop is not a boundary cycle", l.label)));
            };
            if used[i] {
                return Err(Error::InvalidMesh(format!("{:?} loop listed twice", l.label)));
            }
            used[i] = true;
            labelled.push(BoundaryLoop {
                label: l.label,
                vertices: traced[i].clone(),
            });
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidMesh("a boundary edge belongs to no labelled loop".into()));
        }
        labelled.sort_by_key(|l| l.label);
        if labelled.first().map(|l| l.label) != Some(LoopLabel::Outer)
            || labelled.iter().filter(|l| l.label == LoopLabel::Outer).count() != 1
        {
            return Err(Error::InvalidMesh("exactly one outer loop required".into()));
        }
        for (k, l) in labelled[1..].iter().enumerate() {
            if l.label != LoopLabel::Obstacle(k) {
                return Err(Error::InvalidMesh(format!("obstacle labels must be 0..n, missing {k}")));
            }
        }
        let n = labelled.len() as i64 - 1;
        let chi = topo.euler_characteristic(vertices.len(), faces.len());
        if chi != 1 - n {
            return Err(Error::InvalidMesh(format!(
                "Euler characteristic {chi} differs from 1 - n = {}",
                1 - n
            )));
        }
        let mut vertex_loop = vec![None; vertices.len()];
        for (li, l) in labelled.iter().enumerate() {
            for &v in &l.vertices {
                vertex_loop[v] = Some(li);
            }
        }
        Ok(TriMesh {
            vertices,
            faces,
            loops: labelled,
            samples,
            topo,
            vertex_loop,
        })
    }

    /// Builds a mesh whose boundary cycles are labelled by `label(cycle)`.
    pub fn with_labels<F>(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, mut label: F) -> Result<TriMesh>
    where
        F: FnMut(&[usize]) -> LoopLabel,
    {
        let topo = Topology::build(vertices.len(), &faces)?;
        let loops = trace_boundary_loops(&faces, &topo)?
            .into_iter()
            .map(|c| BoundaryLoop {
                label: label(&c),
                vertices: c,
            })
            .collect();
        TriMesh::new(vertices, faces, loops, None)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn loops(&self) -> &[BoundaryLoop] {
        &self.loops
    }

    pub fn outer_loop(&self) -> &BoundaryLoop {
        &self.loops[0]
    }

    pub fn obstacle_loop(&self, k: usize) -> &BoundaryLoop {
        &self.loops[k + 1]
    }

    pub fn obstacle_count(&self) -> usize {
        self.loops.len() - 1
    }

    pub fn samples(&self) -> Option<&[f64]> {
        self.samples.as_deref()
    }

    pub fn set_samples(&mut self, samples: Option<Vec<f64>>) -> Result<()> {
        if let Some(s) = &samples {
            if s.len() != self.vertices.len() {
                return Err(Error::InvalidMesh("sample count differs from vertex count".into()));
            }
        }
        self.samples = samples;
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.vertex_loop[v].is_some()
    }

    /// Index into [`loops`](Self::loops) of the loop through `v`.
    pub fn loop_of(&self, v: usize) -> Option<usize> {
        self.vertex_loop[v]
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.topo.euler_characteristic(self.vertices.len(), self.faces.len())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(&self.vertices, self.faces[f])
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.topo.edges[e];
        (self.vertices[a] - self.vertices[b]).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let n = self.topo.edges.len().max(1) as f64;
        (0..self.topo.edges.len()).map(|e| self.edge_length(e)).sum::<f64>() / n
    }

    /// The whole mesh as a patch.
    pub fn as_patch(&self) -> Result<Patch> {
        Patch::from_faces(self, &(0..self.faces.len()).collect::<Vec<_>>())
    }
}

pub fn triangle_area(pos: &[Vec3], f: [usize; 3]) -> f64 {
    0.5 * (pos[f[1]] - pos[f[0]]).cross(&(pos[f[2]] - pos[f[0]])).norm()
}

/// Orthonormal frame of a 3D triangle: local 2D coordinates of its corners
/// with the first corner at the origin and the first edge along +x.
pub fn face_frame(p0: Vec3, p1: Vec3, p2: Vec3) -> Option<[Vector2<f64>; 3]> {
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let l1 = e1.norm();
    let n = e1.cross(&e2);
    if l1 == 0.0 || n.norm() <= 1e-14 * l1 * e2.norm().max(l1) {
        return None;
    }
    let x = e1 / l1;
    let y = n.normalize().cross(&x);
    Some([
        Vector2::new(0.0, 0.0),
        Vector2::new(l1, 0.0),
        Vector2::new(e2.dot(&x), e2.dot(&y)),
    ])
}

/// A face subset of a mesh with its own local indexing.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Global vertex id of each local vertex.
    pub global: Vec<usize>,
    /// Global face ids, aligned with `faces`.
    pub global_faces: Vec<usize>,
    pub positions: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub topo: Topology,
    /// Local boundary cycles following the face orientation.
    pub loops: Vec<Vec<usize>>,
}

impl Patch {
    pub fn from_faces(mesh: &TriMesh, face_ids: &[usize]) -> Result<Patch> {
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        let mut global = Vec::new();
        let mut faces = Vec::with_capacity(face_ids.len());
        for &f in face_ids {
            let mut lf = [0; 3];
            for (j, &v) in mesh.faces[f].iter().enumerate() {
                lf[j] = *local.entry(v).or_insert_with(|| {
                    global.push(v);
                    global.len() - 1
                });
            }
            faces.push(lf);
        }
        let positions = global.iter().map(|&g| mesh.vertices[g]).collect();
        Patch::new(global, face_ids.to_vec(), positions, faces)
    }

    pub fn new(
        global: Vec<usize>,
        global_faces: Vec<usize>,
        positions: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Patch> {
        let topo = Topology::build(positions.len(), &faces)?;
        let loops = trace_boundary_loops(&faces, &topo)?;
        Ok(Patch {
            global,
            global_faces,
            positions,
            faces,
            topo,
            loops,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.topo.euler_characteristic(self.positions.len(), self.faces.len())
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.positions.len()];
        for l in &self.loops {
            for &v in l {
                m[v] = true;
            }
        }
        m
    }

    pub fn local_of(&self, g: usize) -> Option<usize> {
        self.global.iter().position(|&x| x == g)
    }

    /// Global-to-local lookup table sized for a mesh of `n_global` vertices.
    pub fn local_table(&self, n_global: usize) -> Vec<usize> {
        let mut t = vec![NONE; n_global];
        for (l, &g) in self.global.iter().enumerate() {
            t[g] = l;
        }
        t
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(&self.positions, self.faces[f])
    }

    pub fn loop_length(&self, l: usize) -> f64 {
        let c = &self.loops[l];
        (0..c.len())
            .map(|i| (self.positions[c[i]] - self.positions[c[(i + 1) % c.len()]]).norm())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        (v, vec![[0, 1, 2], [0, 2, 3]])
    }

    #[test]
    fn disk_mesh_accepted() {
        let (v, f) = square();
        let m = TriMesh::with_labels(v, f, |_| LoopLabel::Outer).unwrap();
        assert_eq!(m.euler_characteristic(), 1);
        assert_eq!(m.outer_loop().vertices, vec![0, 1, 2, 3]);
        assert_eq!(m.obstacle_count(), 0);
    }

    #[test]
    fn reversed_loop_is_reoriented() {
        let (v, f) = square();
        let l = BoundaryLoop {
            label: LoopLabel::Outer,
            vertices: vec![3, 2, 1, 0],
        };
        let m = TriMesh::new(v, f, vec![l], None).unwrap();
        assert_eq!(m.outer_loop().vertices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let (v, _) = square();
        let err = TriMesh::with_labels(v, vec![[0, 1, 2], [0, 3, 2]], |_| LoopLabel::Outer);
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn missing_obstacle_label_rejected() {
        // annulus labelled as two outer loops fails; correct labels pass
        let m = gen::flat_annulus(0.4, 1.0, 3, 12, false);
        let loops: Vec<_> = m.loops().to_vec();
        let bad: Vec<_> = loops
            .iter()
            .map(|l| BoundaryLoop {
                label: LoopLabel::Outer,
                vertices: l.vertices.clone(),
            })
            .collect();
        assert!(TriMesh::new(m.vertices().to_vec(), m.faces().to_vec(), bad, None).is_err());
        let only_outer = vec![loops[0].clone()];
        assert!(TriMesh::new(m.vertices().to_vec(), m.faces().to_vec(), only_outer, None).is_err());
        assert_eq!(m.euler_characteristic(), 0);
    }

    #[test]
    fn patch_loops_and_chi() {
        let m = gen::flat_annulus(0.4, 1.0, 3, 12, false);
        let p = m.as_patch().unwrap();
        assert_eq!(p.loops.len(), 2);
        assert_eq!(p.euler_characteristic(), 0);
        let half: Vec<usize> = (0..m.n_faces())
            .filter(|&f| m.face_centroid(f).y > 0.0)
            .collect();
        let h = Patch::from_faces(&m, &half).unwrap();
        assert_eq!(h.euler_characteristic(), 1);
        assert_eq!(h.loops.len(), 1);
    }

    #[test]
    fn face_frame_preserves_lengths() {
        let p = [
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::new(1.0, -0.4, 0.9),
            Vec3::new(0.3, 0.8, -0.5),
        ];
        let q = face_frame(p[0], p[1], p[2]).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert!(((p[i] - p[j]).norm() - (q[i] - q[j]).norm()).abs() < 1e-12);
        }
        assert!(q[2].y > 0.0);
    }
}
