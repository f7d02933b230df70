//! Maps of doubly connected regions onto round annuli `ρ < |z| < 1`.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::{signed_area2, AnnulusMap, VertexImage};
use crate::error::{Error, Result};
use crate::geometry::Complex2;
use crate::graph::Graph;
use crate::linalg::{apply_laplacian, cotan_weights, pcg, DirichletSolver, CG_TOL};
use crate::mesh::{face_frame, LoopLabel, Patch, TriMesh, NONE};

/// Bisection stops once the bracket on ρ is narrower than this.
pub const MODULUS_TOL: f64 = 1e-4;

/// Maps the faces of one obstacle region; the region's obstacle loop goes
/// to the inner circle.
pub fn annulus_map(mesh: &TriMesh, faces: &[usize], region: usize) -> Result<AnnulusMap> {
    let patch = Patch::from_faces(mesh, faces)?;
    if patch.loops.len() != 2 {
        return Err(Error::InadmissiblePartition(format!(
            "region {region} has {} boundary loops",
            patch.loops.len()
        )));
    }
    let on_obstacle = |l: &Vec<usize>| {
        l.iter()
            .filter(|&&v| {
                mesh.loop_of(patch.global[v])
                    .is_some_and(|i| matches!(mesh.loops()[i].label, LoopLabel::Obstacle(_)))
            })
            .count() as f64
            / l.len() as f64
    };
    let inner = if on_obstacle(&patch.loops[0]) >= on_obstacle(&patch.loops[1]) { 0 } else { 1 };
    annulus_map_patch(&patch, inner, region)
}

/// Face lookup for the half-edge `a → b`.
fn face_with(patch: &Patch, a: usize, b: usize) -> usize {
    match patch.topo.edge_between(a, b) {
        Some(e) => patch.topo.edge_faces[e][if a < b { 0 } else { 1 }],
        None => NONE,
    }
}

fn corner(f: &[usize; 3], v: usize) -> usize {
    f.iter().position(|&x| x == v).expect("vertex on face")
}

/// Shortest interior path from the inner loop to the outer loop.
fn cut_path(patch: &Patch, inner: usize) -> Result<Vec<usize>> {
    let n = patch.n_vertices();
    let mut which = vec![NONE; n];
    for (l, lp) in patch.loops.iter().enumerate() {
        for &v in lp {
            which[v] = l;
        }
    }
    let (src, sink) = (n, n + 1);
    let mut edges = Vec::new();
    for (e, &[a, b]) in patch.topo.edges.iter().enumerate() {
        let ok = match (which[a], which[b]) {
            (NONE, _) | (_, NONE) => true,
            (x, y) => x != y && !patch.topo.is_boundary_edge(e),
        };
        if ok {
            edges.push((a, b, (patch.positions[a] - patch.positions[b]).norm()));
        }
    }
    for v in 0..n {
        if which[v] == inner {
            edges.push((src, v, 0.0));
        } else if which[v] != NONE {
            edges.push((v, sink, 0.0));
        }
    }
    let g = Graph::from_edges(n + 2, &edges);
    let (_, path) = g
        .shortest_path(src, sink)
        .ok_or_else(|| Error::InadmissiblePartition("annulus loops are not connected".into()))?;
    Ok(path[1..path.len() - 1].to_vec())
}

/// Faces to the right of the directed cut, with the cut vertices they touch.
fn right_side(patch: &Patch, path: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let k = path.len();
    for (i, &v) in path.iter().enumerate() {
        if i + 1 < k {
            // sweep clockwise from the forward edge towards the backward one
            let next = path[i + 1];
            let stop = if i > 0 { Some(path[i - 1]) } else { None };
            let mut f = face_with(patch, next, v);
            let mut guard = 0;
            while f != NONE && guard < 64 {
                out.push((f, v));
                let face = &patch.faces[f];
                let y = face[(corner(face, v) + 1) % 3];
                if Some(y) == stop {
                    break;
                }
                f = face_with(patch, y, v);
                guard += 1;
            }
        } else {
            // last vertex sits on the outer loop: sweep counter-clockwise from
            // the backward edge to the boundary
            let prev = path[i - 1];
            let mut f = face_with(patch, v, prev);
            let mut guard = 0;
            while f != NONE && guard < 64 {
                out.push((f, v));
                let face = &patch.faces[f];
                let x = face[(corner(face, v) + 2) % 3];
                f = face_with(patch, v, x);
                guard += 1;
            }
        }
    }
    out
}

/// Finds ρ with `Φ·ln(1/ρ) = 2π` by bisection, Φ being the flux of the unit
/// harmonic function across the inner loop.
fn bisect_modulus(flux: f64) -> Result<f64> {
    let g = |rho: f64| flux * (1.0 / rho).ln() - TAU;
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(Error::ModulusDivergence);
    }
    while hi - lo >= MODULUS_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Annulus map of a patch with two boundary loops; `inner` indexes the loop
/// sent to `|z| = ρ`. The image is `exp(u + iθ)` with `u` harmonic and `θ`
/// its conjugate recovered by least squares across a cut.
pub fn annulus_map_patch(patch: &Patch, inner: usize, region: usize) -> Result<AnnulusMap> {
    if patch.loops.len() != 2 || patch.euler_characteristic() != 0 {
        return Err(Error::InadmissiblePartition(format!("region {region} is not an annulus")));
    }
    let n = patch.n_vertices();
    let w = cotan_weights(&patch.positions, &patch.faces, &patch.topo, true);
    let mut fixed = vec![false; n];
    let mut unit = vec![0.0; n];
    for (l, lp) in patch.loops.iter().enumerate() {
        for &v in lp {
            fixed[v] = true;
            unit[v] = if l == inner { 1.0 } else { 0.0 };
        }
    }
    let solver = DirichletSolver::new(n, &patch.topo.edges, &w, &fixed)?;
    let u1 = solver.solve(&unit)?;
    let lap = apply_laplacian(n, &patch.topo.edges, &w, &u1);
    let flux: f64 = patch.loops[inner].iter().map(|&v| lap[v]).sum();
    let rho = bisect_modulus(flux)?;
    let u: Vec<f64> = u1.iter().map(|x| x * rho.ln()).collect();

    let path = cut_path(patch, inner)?;
    let mut offset = vec![[0.0f64; 3]; patch.faces.len()];
    for (f, v) in right_side(patch, &path) {
        offset[f][corner(&patch.faces[f], v)] = TAU;
    }

    // least-squares conjugate: Σ_f A_f |∇θ − rot90 ∇u|², θ pinned at vertex 0
    let pin = 0;
    let idx: Vec<usize> = (0..n).map(|v| if v < pin { v } else if v == pin { NONE } else { v - 1 }).collect();
    let mut coo = CooMatrix::new(n - 1, n - 1);
    let mut rhs = vec![0.0; n - 1];
    for (fi, f) in patch.faces.iter().enumerate() {
        let p = [patch.positions[f[0]], patch.positions[f[1]], patch.positions[f[2]]];
        let Some(q) = face_frame(p[0], p[1], p[2]) else {
            return Err(Error::DegenerateFace { face: patch.global_faces[fi] });
        };
        let area2 = (q[1] - q[0]).perp(&(q[2] - q[0]));
        let grad: Vec<Vector2<f64>> = (0..3)
            .map(|j| {
                let d = q[(j + 2) % 3] - q[(j + 1) % 3];
                Vector2::new(-d.y, d.x) / area2
            })
            .collect();
        let area = 0.5 * area2;
        let gu: Vector2<f64> = (0..3).map(|j| grad[j] * u[f[j]]).sum();
        let mut target = Vector2::new(-gu.y, gu.x);
        for j in 0..3 {
            target -= grad[j] * offset[fi][j];
        }
        for a in 0..3 {
            let ia = idx[f[a]];
            if ia == NONE {
                continue;
            }
            rhs[ia] += area * grad[a].dot(&target);
            for b in 0..3 {
                let ib = idx[f[b]];
                if ib != NONE {
                    coo.push(ia, ib, area * grad[a].dot(&grad[b]));
                }
            }
        }
    }
    let k = CsrMatrix::from(&coo);
    let sol = pcg(&k, &rhs, None, CG_TOL, 20 * n + 100)?;
    let theta: Vec<f64> = (0..n).map(|v| if idx[v] == NONE { 0.0 } else { sol[idx[v]] }).collect();

    let image: Vec<Complex2> = (0..n).map(|v| Complex2::new(u[v], theta[v]).exp()).collect();
    let mut folded = 0;
    for (fi, f) in patch.faces.iter().enumerate() {
        let c: Vec<Complex2> = (0..3)
            .map(|j| Complex2::new(u[f[j]], theta[f[j]] + offset[fi][j]).exp())
            .collect();
        // unwrap angular spread so a face straddling the cut is measured whole
        let spread = (0..3)
            .map(|j| theta[f[j]] + offset[fi][j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
        if spread.1 - spread.0 > PI || signed_area2(c[0], c[1], c[2]) <= 0.0 {
            folded += 1;
        }
    }
    if folded > 0 {
        return Err(Error::MapFoldover { count: folded });
    }
    Ok(AnnulusMap {
        region,
        vertices: VertexImage::new(patch.global.clone(), image),
        modulus: rho,
    })
}
