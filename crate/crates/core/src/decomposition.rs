//! Geodesic Voronoi decomposition of a surface into disk-like and
//! annular cells, with admissibility checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mesh::{face_components, Patch, TriMesh, Vec3, NONE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    /// Generator vertex ids.
    pub points: Vec<usize>,
    /// `obstacle_assignment[k]` lists indices into `points` serving obstacle k.
    pub obstacle_assignment: Vec<Vec<usize>>,
    /// Declared star-shapedness per obstacle.
    pub star_shaped: Vec<bool>,
}

impl GeneratorSet {
    /// Checks the structural constraints against a mesh.
    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        let bad = |m: String| Error::InadmissiblePartition(m);
        if self.points.is_empty() {
            return Err(bad("generator set is empty".into()));
        }
        if self.points.iter().any(|&p| p >= mesh.n_vertices()) {
            return Err(bad("generator outside the mesh".into()));
        }
        let distinct: BTreeSet<usize> = self.points.iter().copied().collect();
        if distinct.len() != self.points.len() {
            return Err(bad("generators must be distinct vertices".into()));
        }
        let n = mesh.obstacle_count();
        if self.obstacle_assignment.len() != n || self.star_shaped.len() != n {
            return Err(bad(format!("assignment covers {} obstacles, mesh has {n}", self.obstacle_assignment.len())));
        }
        let mut owner = vec![NONE; self.points.len()];
        for (k, gens) in self.obstacle_assignment.iter().enumerate() {
            let need = if self.star_shaped[k] { 1 } else { 2 };
            if gens.len() < need {
                return Err(bad(format!("obstacle {k} needs at least {need} generator(s)")));
            }
            for &g in gens {
                if g >= self.points.len() || owner[g] != NONE {
                    return Err(bad(format!("generator {g} assigned twice or missing")));
                }
                owner[g] = k;
            }
        }
        if n > 0 && owner.iter().any(|&o| o == NONE) {
            return Err(bad("every generator must serve an obstacle".into()));
        }
        Ok(())
    }

    /// Obstacle served by generator `g`.
    pub fn obstacle_of(&self, g: usize) -> Option<usize> {
        self.obstacle_assignment.iter().position(|gs| gs.contains(&g))
    }

    /// Evenly spaced loop vertices: one per star obstacle, `per_obstacle`
    /// for the others.
    pub fn on_loops(mesh: &TriMesh, star_shaped: &[bool], per_obstacle: usize) -> GeneratorSet {
        let mut points = Vec::new();
        let mut obstacle_assignment = Vec::new();
        for k in 0..mesh.obstacle_count() {
            let lp = &mesh.obstacle_loop(k).vertices;
            let count = if star_shaped[k] { 1 } else { per_obstacle.max(2) };
            let mut ids = Vec::new();
            for j in 0..count {
                ids.push(points.len());
                points.push(lp[j * lp.len() / count]);
            }
            obstacle_assignment.push(ids);
        }
        if points.is_empty() {
            points.push(0);
        }
        GeneratorSet {
            points,
            obstacle_assignment,
            star_shaped: star_shaped.to_vec(),
        }
    }

    /// Like [`on_loops`](Self::on_loops) with each obstacle's generators
    /// rotated along its loop by `offsets[k]` vertices.
    pub fn on_loops_rotated(mesh: &TriMesh, star_shaped: &[bool], per_obstacle: usize, offsets: &[usize]) -> GeneratorSet {
        let mut g = GeneratorSet::on_loops(mesh, star_shaped, per_obstacle);
        for k in 0..mesh.obstacle_count() {
            let lp = &mesh.obstacle_loop(k).vertices;
            let count = g.obstacle_assignment[k].len();
            for (j, &gi) in g.obstacle_assignment[k].iter().enumerate() {
                g.points[gi] = lp[(j * lp.len() / count + offsets[k]) % lp.len()];
            }
        }
        g
    }

    /// Tries seeded rotations of the loop placement until the tessellation is
    /// admissible. Returns the generator set and the number of attempts.
    pub fn search_on_loops(
        mesh: &TriMesh,
        star_shaped: &[bool],
        per_obstacle: usize,
        seed: u64,
        max_tries: usize,
    ) -> Result<(GeneratorSet, usize)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = mesh.obstacle_count();
        let mut offsets = vec![0usize; n];
        let mut last = None;
        for attempt in 1..=max_tries {
            let g = GeneratorSet::on_loops_rotated(mesh, star_shaped, per_obstacle, &offsets);
            match gvt_partition(mesh, &g) {
                Ok(cells) if validate_admissibility(&cells, mesh).pass() => return Ok((g, attempt)),
                Ok(_) => last = Some(Error::InadmissiblePartition("cells fail admissibility".into())),
                Err(e) => last = Some(e),
            }
            for (k, o) in offsets.iter_mut().enumerate() {
                *o = rng.random_range(0..mesh.obstacle_loop(k).vertices.len());
            }
        }
        Err(last.unwrap_or_else(|| Error::InadmissiblePartition("no attempts".into())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubdomainKind {
    TypeI,
    TypeII,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub id: usize,
    /// Sorted global face ids.
    pub faces: Vec<usize>,
    pub kind: SubdomainKind,
    pub enclosed_obstacle: Option<usize>,
    /// Neighbour id to shared global edge ids.
    pub interfaces: BTreeMap<usize, Vec<usize>>,
}

/// Euclidean edge-length graph on the mesh vertices.
pub fn edge_graph(mesh: &TriMesh) -> Graph {
    let t = mesh.topology();
    let edges: Vec<(usize, usize, f64)> = (0..t.edges.len())
        .map(|e| (t.edges[e][0], t.edges[e][1], mesh.edge_length(e)))
        .collect();
    Graph::from_edges(mesh.n_vertices(), &edges)
}

/// Face-to-cell labels from geodesic nearest generators. Each face centroid
/// joins the graph through its three corners, so a face goes to the
/// generator minimising `d(corner) + |corner − centroid|`.
pub fn voronoi_labels(mesh: &TriMesh, gens: &GeneratorSet) -> Vec<usize> {
    let g = edge_graph(mesh);
    let sources: Vec<(usize, f64, usize)> = gens.points.iter().enumerate().map(|(i, &p)| (p, 0.0, i)).collect();
    let (dist, vlabel) = g.labelled_distances(&sources);
    (0..mesh.n_faces())
        .map(|f| {
            let c = mesh.face_centroid(f);
            let mut best = (f64::INFINITY, usize::MAX);
            for &v in &mesh.faces()[f] {
                let d = dist[v] + (mesh.vertices()[v] - c).norm();
                if d < best.0 || (d == best.0 && vlabel[v] < best.1) {
                    best = (d, vlabel[v]);
                }
            }
            best.1
        })
        .collect()
}

/// Groups faces into cells by label and records interfaces.
pub fn cells_from_labels(mesh: &TriMesh, labels: &[usize], n_cells: usize) -> Result<Vec<Subdomain>> {
    let mut faces = vec![Vec::new(); n_cells];
    for (f, &l) in labels.iter().enumerate() {
        if l >= n_cells {
            return Err(Error::InadmissiblePartition(format!("face {f} is unassigned")));
        }
        faces[l].push(f);
    }
    let t = mesh.topology();
    let mut interfaces = vec![BTreeMap::<usize, Vec<usize>>::new(); n_cells];
    for (e, ef) in t.edge_faces.iter().enumerate() {
        if ef[0] == NONE || ef[1] == NONE {
            continue;
        }
        let (a, b) = (labels[ef[0]], labels[ef[1]]);
        if a != b {
            interfaces[a].entry(b).or_default().push(e);
            interfaces[b].entry(a).or_default().push(e);
        }
    }
    let mut out = Vec::with_capacity(n_cells);
    for (id, (fs, ifc)) in faces.into_iter().zip(interfaces).enumerate() {
        if fs.is_empty() {
            return Err(Error::InadmissiblePartition(format!("cell {id} is empty")));
        }
        let mut sub = Subdomain {
            id,
            faces: fs,
            kind: SubdomainKind::TypeI,
            enclosed_obstacle: None,
            interfaces: ifc,
        };
        let (kind, obs) = classify_subdomain(&sub, mesh)?;
        sub.kind = kind;
        sub.enclosed_obstacle = obs;
        out.push(sub);
    }
    Ok(out)
}

/// Geodesic Voronoi tessellation with one cell per generator.
pub fn gvt_partition(mesh: &TriMesh, gens: &GeneratorSet) -> Result<Vec<Subdomain>> {
    gens.validate(mesh)?;
    let labels = voronoi_labels(mesh, gens);
    cells_from_labels(mesh, &labels, gens.points.len())
}

/// Connected pieces of each straight-line Voronoi cell of `sites`, faces
/// assigned by centroid. Empty cells report 0. A count above 1 means the
/// cell is split by a hole.
pub fn euclidean_cell_components(mesh: &TriMesh, sites: &[Vec3]) -> Vec<usize> {
    let mut faces = vec![Vec::new(); sites.len()];
    for f in 0..mesh.n_faces() {
        let c = mesh.face_centroid(f);
        let nearest = (0..sites.len()).min_by(|&a, &b| (sites[a] - c).norm().total_cmp(&(sites[b] - c).norm()));
        if let Some(i) = nearest {
            faces[i].push(f);
        }
    }
    faces
        .iter()
        .map(|fs| if fs.is_empty() { 0 } else { face_components(fs, mesh.topology()) })
        .collect()
}

/// Obstacle loops of `mesh` appearing whole among the boundary cycles of `patch`.
pub fn full_obstacle_loops(patch: &Patch, mesh: &TriMesh) -> Vec<usize> {
    let mut out = Vec::new();
    for lp in &patch.loops {
        let g: Vec<usize> = lp.iter().map(|&v| patch.global[v]).collect();
        let Some(li) = mesh.loop_of(g[0]) else {
            continue;
        };
        let ml = &mesh.loops()[li];
        if li == 0 || ml.vertices.len() != g.len() {
            continue;
        }
        let set: BTreeSet<usize> = ml.vertices.iter().copied().collect();
        if g.iter().all(|v| set.contains(v)) {
            out.push(li - 1);
        }
    }
    out
}

/// Disk-like iff χ = 1; annular around one obstacle iff χ = 0 with exactly
/// one whole obstacle loop.
pub fn classify_subdomain(sub: &Subdomain, mesh: &TriMesh) -> Result<(SubdomainKind, Option<usize>)> {
    let bad = |m: String| Error::InadmissiblePartition(format!("cell {}: {m}", sub.id));
    if face_components(&sub.faces, mesh.topology()) != 1 {
        return Err(bad("disconnected".into()));
    }
    let patch = Patch::from_faces(mesh, &sub.faces).map_err(|e| bad(e.to_string()))?;
    let chi = patch.euler_characteristic();
    let obs = full_obstacle_loops(&patch, mesh);
    match (chi, obs.len()) {
        (1, 0) => Ok((SubdomainKind::TypeI, None)),
        (0, 1) => Ok((SubdomainKind::TypeII, Some(obs[0]))),
        (_, m) if m > 1 => Err(bad(format!("contains {m} obstacle loops"))),
        (c, _) => Err(bad(format!("Euler characteristic {c}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub id: usize,
    pub chi: Option<i64>,
    pub components: usize,
    pub obstacle_loops: Vec<usize>,
    pub kind: Option<SubdomainKind>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub cells: Vec<CellReport>,
    /// Problems that are not tied to a single cell.
    pub global: Vec<String>,
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.global.is_empty() && self.cells.iter().all(|c| c.failure.is_none())
    }

    pub fn failing_cells(&self) -> Vec<usize> {
        self.cells.iter().filter(|c| c.failure.is_some()).map(|c| c.id).collect()
    }
}

impl fmt::Display for AdmissibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "admissibility: {}", if self.pass() { "PASS" } else { "FAIL" })?;
        for c in &self.cells {
            write!(f, "cell {} chi={} components={} obstacles={:?} kind=", c.id,
                c.chi.map(|x| x.to_string()).unwrap_or_else(|| "-".into()), c.components, c.obstacle_loops)?;
            match c.kind {
                Some(SubdomainKind::TypeI) => write!(f, "I")?,
                Some(SubdomainKind::TypeII) => write!(f, "II")?,
                None => write!(f, "-")?,
            }
            if let Some(m) = &c.failure {
                write!(f, " error=\"{m}\"")?;
            }
            writeln!(f)?;
        }
        for g in &self.global {
            writeln!(f, "global error=\"{g}\"")?;
        }
        Ok(())
    }
}

/// Per-cell topology report plus cover and obstacle-enclosure checks.
pub fn validate_admissibility(subs: &[Subdomain], mesh: &TriMesh) -> AdmissibilityReport {
    let t = mesh.topology();
    let mut cells = Vec::new();
    let mut owner = vec![NONE; mesh.n_faces()];
    let mut global = Vec::new();
    for s in subs {
        for &f in &s.faces {
            if f >= owner.len() {
                global.push(format!("cell {} lists missing face {f}", s.id));
            } else if owner[f] != NONE {
                global.push(format!("face {f} in cells {} and {}", owner[f], s.id));
            } else {
                owner[f] = s.id;
            }
        }
        let components = face_components(&s.faces, t);
        let patch = Patch::from_faces(mesh, &s.faces);
        let (chi, loops) = match &patch {
            Ok(p) => (Some(p.euler_characteristic()), full_obstacle_loops(p, mesh)),
            Err(_) => (None, vec![]),
        };
        let (kind, failure) = match classify_subdomain(s, mesh) {
            Ok((k, _)) => (Some(k), None),
            Err(e) => (None, Some(e.to_string())),
        };
        cells.push(CellReport {
            id: s.id,
            chi,
            components,
            obstacle_loops: loops,
            kind,
            failure,
        });
    }
    if let Some(f) = owner.iter().position(|&o| o == NONE) {
        global.push(format!("face {f} belongs to no cell"));
    }
    // obstacles not enclosed by an annular cell must be ringed by disk cells
    for k in 0..mesh.obstacle_count() {
        if cells.iter().any(|c| c.kind == Some(SubdomainKind::TypeII) && c.obstacle_loops == vec![k]) {
            continue;
        }
        let lp = &mesh.obstacle_loop(k).vertices;
        let mut touching = BTreeSet::new();
        for i in 0..lp.len() {
            if let Some(e) = t.edge_between(lp[i], lp[(i + 1) % lp.len()]) {
                for &f in &t.edge_faces[e] {
                    if f != NONE && owner[f] != NONE {
                        touching.insert(owner[f]);
                    }
                }
            }
        }
        if touching.len() < 2 {
            global.push(format!("obstacle {k} is neither enclosed nor ringed"));
            continue;
        }
        let union: Vec<usize> = subs
            .iter()
            .filter(|s| touching.contains(&s.id))
            .flat_map(|s| s.faces.iter().copied())
            .collect();
        match Patch::from_faces(mesh, &union) {
            Ok(p) if p.euler_characteristic() == 0 => {}
            Ok(p) => global.push(format!("cells around obstacle {k} have union chi {}", p.euler_characteristic())),
            Err(e) => global.push(format!("cells around obstacle {k}: {e}")),
        }
    }
    AdmissibilityReport { cells, global }
}

/// Faces of the cells serving each obstacle (the whole mesh when `n = 0`).
pub fn obstacle_regions(subs: &[Subdomain], gens: &GeneratorSet, n_obstacles: usize) -> Vec<Vec<usize>> {
    if n_obstacles == 0 {
        let mut all: Vec<usize> = subs.iter().flat_map(|s| s.faces.iter().copied()).collect();
        all.sort_unstable();
        return vec![all];
    }
    (0..n_obstacles)
        .map(|k| {
            let mut fs: Vec<usize> = gens.obstacle_assignment[k]
                .iter()
                .flat_map(|&g| subs[g].faces.iter().copied())
                .collect();
            fs.sort_unstable();
            fs
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;

    #[test]
    fn straight_line_cells_split_across_a_hole() {
        let m = gen::surface(&gen::SurfaceSpec {
            outer_radius: 1.0,
            holes: vec![gen::HoleShape::Circle {
                center: [0.0, 0.0],
                radius: 0.45,
            }],
            spacing: 0.08,
            height: gen::HeightField::Flat,
        })
        .unwrap();
        // the middle cell is the strip |x| < 0.375, which the hole cuts in two
        let sites = [Vec3::new(-0.75, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.75, 0.0, 0.0)];
        assert_eq!(euclidean_cell_components(&m, &sites), vec![1, 2, 1]);
        let far = [Vec3::new(0.0, 0.7, 0.0), Vec3::new(5.0, 5.0, 0.0)];
        assert_eq!(euclidean_cell_components(&m, &far), vec![1, 0]);
    }

    #[test]
    fn single_generator_disk() {
        let m = gen::flat_disk(1.0, 0.2).unwrap();
        let g = GeneratorSet {
            points: vec![0],
            obstacle_assignment: vec![],
            star_shaped: vec![],
        };
        let cells = gvt_partition(&m, &g).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].faces.len(), m.n_faces());
        assert_eq!(cells[0].kind, SubdomainKind::TypeI);
        assert!(validate_admissibility(&cells, &m).pass());
    }

    #[test]
    fn symmetric_annulus_halves() {
        // no vertex lies on the bisector, so no distance ties
        let m = gen::annulus_grid(0.4, 1.0, 4, 26, false, false);
        let lp = &m.obstacle_loop(0).vertices;
        let g = GeneratorSet {
            points: vec![lp[0], lp[13]],
            obstacle_assignment: vec![vec![0, 1]],
            star_shaped: vec![false],
        };
        let cells = gvt_partition(&m, &g).unwrap();
        let (a, b) = (cells[0].faces.len() as i64, cells[1].faces.len() as i64);
        assert!((a - b).abs() <= 1, "{a} vs {b}");
        assert!(cells.iter().all(|c| c.kind == SubdomainKind::TypeI));
        for (i, c) in cells.iter().enumerate() {
            for (j, es) in &c.interfaces {
                assert_eq!(&cells[*j].interfaces[&i], es);
            }
        }
    }

    #[test]
    fn star_obstacle_gives_annular_cell() {
        let m = gen::flat_annulus(0.4, 1.0, 4, 24, false);
        let g = GeneratorSet::on_loops(&m, &[true], 3);
        let cells = gvt_partition(&m, &g).unwrap();
        assert_eq!(cells[0].kind, SubdomainKind::TypeII);
        assert_eq!(cells[0].enclosed_obstacle, Some(0));
    }

    #[test]
    fn merged_cells_over_two_obstacles_fail() {
        let m = gen::surface(&gen::three_hole_spec()).unwrap();
        let (g, _) = GeneratorSet::search_on_loops(&m, &[false; 3], 3, 0, 200).unwrap();
        let cells = gvt_partition(&m, &g).unwrap();
        assert!(validate_admissibility(&cells, &m).pass());
        let labels: Vec<usize> = (0..m.n_faces())
            .map(|f| {
                let c = cells.iter().position(|c| c.faces.binary_search(&f).is_ok()).unwrap();
                let k = g.obstacle_of(c).unwrap();
                if k <= 1 { 0 } else { 1 }
            })
            .collect();
        let mut merged = vec![Vec::new(), Vec::new()];
        for (f, &l) in labels.iter().enumerate() {
            merged[l].push(f);
        }
        let subs: Vec<Subdomain> = merged
            .into_iter()
            .enumerate()
            .map(|(id, faces)| Subdomain {
                id,
                faces,
                kind: SubdomainKind::TypeI,
                enclosed_obstacle: None,
                interfaces: BTreeMap::new(),
            })
            .collect();
        let rep = validate_admissibility(&subs, &m);
        assert!(!rep.pass());
        assert!(rep.failing_cells().contains(&0));
    }
}
