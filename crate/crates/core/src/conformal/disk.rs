//! Harmonic maps of disk-like patches onto the unit disk.

use std::f64::consts::TAU;

use super::{signed_area2, PatchMap, VertexImage};
use crate::decomposition::{Subdomain, SubdomainKind};
use crate::error::{Error, Result};
use crate::geometry::Complex2;
use crate::linalg::{cotan_weights, DirichletSolver};
use crate::mesh::{Patch, TriMesh};

pub fn disk_map(mesh: &TriMesh, sub: &Subdomain) -> Result<PatchMap> {
    if sub.kind != SubdomainKind::TypeI {
        return Err(Error::InadmissiblePartition(format!("cell {} is not disk-like", sub.id)));
    }
    let patch = Patch::from_faces(mesh, &sub.faces)?;
    disk_map_patch(&patch, sub.id)
}

/// Boundary on the unit circle by normalised arc length starting at angle 0
/// on the first loop vertex; interior by the clamped cotangent Laplacian.
pub fn disk_map_patch(patch: &Patch, id: usize) -> Result<PatchMap> {
    if patch.loops.len() != 1 || patch.euler_characteristic() != 1 {
        return Err(Error::InadmissiblePartition(format!("patch {id} is not a topological disk")));
    }
    let lp = &patch.loops[0];
    let total = patch.loop_length(0);
    let n = patch.n_vertices();
    let mut values = vec![Complex2::new(0.0, 0.0); n];
    let mut fixed = vec![false; n];
    let mut boundary = Vec::with_capacity(lp.len());
    let mut s = 0.0;
    for i in 0..lp.len() {
        let v = lp[i];
        let t = TAU * s / total;
        values[v] = Complex2::from_polar(1.0, t);
        fixed[v] = true;
        boundary.push((patch.global[v], t));
        s += (patch.positions[lp[(i + 1) % lp.len()]] - patch.positions[v]).norm();
    }
    let w = cotan_weights(&patch.positions, &patch.faces, &patch.topo, true);
    let solver = DirichletSolver::new(n, &patch.topo.edges, &w, &fixed)?;
    let image = solver.solve_complex(&values)?;
    let folded = patch
        .faces
        .iter()
        .filter(|f| signed_area2(image[f[0]], image[f[1]], image[f[2]]) <= 0.0)
        .count();
    if folded > 0 {
        return Err(Error::MapFoldover { count: folded });
    }
    Ok(PatchMap {
        patch_id: id,
        vertices: VertexImage::new(patch.global.clone(), image),
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{gen, Vec3};

    #[test]
    fn flat_disk_maps_near_identity() {
        // boundary samples equally spaced on the unit circle; the harmonic map
        // then differs from the identity only by a rotation
        let m = gen::flat_disk(1.0, 0.1).unwrap();
        let p = m.as_patch().unwrap();
        let pm = disk_map_patch(&p, 0).unwrap();
        let first = p.positions[p.loops[0][0]];
        let rot = Complex2::new(first.x, first.y).conj();
        let mut worst: f64 = 0.0;
        for (l, &g) in p.global.iter().enumerate() {
            let q = m.vertices()[g];
            let expect = rot * Complex2::new(q.x, q.y);
            worst = worst.max((pm.vertices.image[l] - expect).norm());
        }
        assert!(worst < 1e-6, "displacement {worst}");
        for &(g, _) in &pm.boundary {
            assert!((pm.image_of(g).unwrap().norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_triangle_uses_arc_length() {
        let pos = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 4.0, 0.0)];
        let p = Patch::new(vec![0, 1, 2], vec![0], pos, vec![[0, 1, 2]]).unwrap();
        let pm = disk_map_patch(&p, 0).unwrap();
        // perimeter 12: edges of length 3, 5, 4 in loop order
        let angles: Vec<f64> = pm.boundary.iter().map(|b| b.1).collect();
        assert_eq!(pm.boundary[0].0, p.global[p.loops[0][0]]);
        assert!(angles[0].abs() < 1e-15);
        assert!((angles[1] - TAU * 3.0 / 12.0).abs() < 1e-12);
        assert!((angles[2] - TAU * 8.0 / 12.0).abs() < 1e-12);
    }
}
