//! Conformal flattening of a poriferous surface onto an n-holed unit disk.
//!
//! Stages run in this order: disk maps of disk-like cells, Möbius welding of
//! the cells ringing each obstacle, annulus maps of the obstacle regions,
//! similarity welding of the annuli, boundary rectification, Möbius
//! inflation and a final harmonic extension.

mod annulus;
mod disk;
mod jacobian;
mod mapped;
mod rectify;
mod weld;

use std::collections::BTreeMap;

use crate::geometry::Complex2;
use crate::mesh::TriMesh;

pub use annulus::{annulus_map, annulus_map_patch};
pub use disk::{disk_map, disk_map_patch};
pub use jacobian::{beltrami_modulus, face_jacobian, jacobian_field, FaceJacobian};
pub use mapped::{
    build_mapping, inverse_map, parse_mapped, read_mapped, save_mapped, write_mapped, DistortionReport, MapOptions,
    MappedMesh, StageRecord,
};
pub use rectify::{
    conformal_energy, inflation_objective, optimize_mobius_inflation, rectify_boundaries, refine_circle_domain,
    solve_harmonic_extension, Rectified, Refined,
};
pub use weld::{
    compose_unified, fit_mobius, global_weld, local_weld, order_chain, slit_weld_map, weld_chain, ChainImage,
    GlobalWeld, WeldResult,
};

/// Images of a patch's vertices, keyed by global vertex id.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexImage {
    pub global: Vec<usize>,
    pub image: Vec<Complex2>,
    index: BTreeMap<usize, usize>,
}

impl VertexImage {
    pub fn new(global: Vec<usize>, image: Vec<Complex2>) -> VertexImage {
        let index = global.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        VertexImage { global, image, index }
    }

    pub fn get(&self, g: usize) -> Option<Complex2> {
        self.index.get(&g).map(|&l| self.image[l])
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }
}

/// Disk map of a disk-like cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMap {
    pub patch_id: usize,
    pub vertices: VertexImage,
    /// Boundary cycle as `(global vertex, angle)` in traversal order.
    pub boundary: Vec<(usize, f64)>,
}

impl PatchMap {
    pub fn image_of(&self, g: usize) -> Option<Complex2> {
        self.vertices.get(g)
    }
}

/// Map of an obstacle region onto `r_k < |z| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusMap {
    pub region: usize,
    pub vertices: VertexImage,
    pub modulus: f64,
}

/// Interface vertices of an edge set with their arc-length weights (half
/// the summed length of incident interface edges).
pub(crate) fn interface_weights(mesh: &TriMesh, edges: &[usize]) -> Vec<(usize, f64)> {
    let mut w: BTreeMap<usize, f64> = BTreeMap::new();
    for &e in edges {
        let [a, b] = mesh.topology().edges[e];
        let l = 0.5 * mesh.edge_length(e);
        *w.entry(a).or_default() += l;
        *w.entry(b).or_default() += l;
    }
    w.into_iter().collect()
}

/// Twice the signed area of a planar triangle.
pub(crate) fn signed_area2(a: Complex2, b: Complex2, c: Complex2) -> f64 {
    let u = b - a;
    let v = c - a;
    u.re * v.im - u.im * v.re
}
