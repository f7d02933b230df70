//! The assembled map, its distortion report and its file format.
//!
//! ```text
//! mappedmesh 1
//! # comments and blank lines are ignored
//! n <vertices> <faces> <obstacles>
//! v <re> <im>                          image of each vertex, index order
//! j <j11> <j12> <j21> <j22> <λ> <|μ|>  per face, index order
//! c <cx> <cy> <r>                      obstacle circles, label order
//! ```
//!
//! The source mesh is stored separately; reading checks the counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::jacobian::{jacobian_field, FaceJacobian};
use super::rectify::{optimize_mobius_inflation, rectify_boundaries, refine_circle_domain, solve_harmonic_extension};
use super::weld::{compose_unified, global_weld, order_chain, weld_chain};
use super::{annulus_map, disk_map, disk_map_patch, AnnulusMap};
use crate::decomposition::{obstacle_regions, GeneratorSet, Subdomain, SubdomainKind};
use crate::error::{Error, Result};
use crate::geometry::{fit_circle, mobius_apply, Circle, Complex2, PlanarLocator};
use crate::mesh::{Patch, TriMesh, NONE};

/// Tolerances of the mapping stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapOptions {
    /// RMS misfit above which a local weld is rejected.
    pub weld_tol: f64,
    /// Largest closing-seam gap, in disk diameters, accepted for a chain.
    pub closure_tol: f64,
    /// Gauss–Newton passes of the circle-domain refinement; 0 disables it.
    pub refine_iter: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            weld_tol: 0.5,
            closure_tol: 0.5,
            refine_iter: 60,
        }
    }
}

/// One stage's residual, for the distortion report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub region: Option<usize>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub mean_mu: f64,
    pub max_mu: f64,
    /// Largest `| |z − c| − r | / r` per obstacle loop.
    pub radial_deviation: Vec<f64>,
    /// Largest `| |z| − 1 |` on the outer loop.
    pub outer_deviation: f64,
    pub flipped_faces: usize,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct MappedMesh {
    pub mesh: TriMesh,
    pub image: Vec<Complex2>,
    pub obstacles: Vec<Circle>,
    pub jacobians: Vec<FaceJacobian>,
    locator: PlanarLocator,
    reach: f64,
}

impl MappedMesh {
    /// Computes Jacobians and fits obstacle circles to the image. Rejects
    /// images with a non-positive face orientation.
    pub fn new(mesh: TriMesh, image: Vec<Complex2>) -> Result<MappedMesh> {
        let jacobians = jacobian_field(&mesh, &image)?;
        let flipped = jacobians.iter().filter(|j| !(j.j.determinant() > 0.0)).count();
        if flipped > 0 {
            return Err(Error::MapFoldover { count: flipped });
        }
        let obstacles = (0..mesh.obstacle_count())
            .map(|k| {
                let pts: Vec<Complex2> = mesh.obstacle_loop(k).vertices.iter().map(|&v| image[v]).collect();
                fit_circle(&pts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(mesh, image, obstacles, jacobians))
    }

    fn assemble(mesh: TriMesh, image: Vec<Complex2>, obstacles: Vec<Circle>, jacobians: Vec<FaceJacobian>) -> MappedMesh {
        let locator = PlanarLocator::with_grid(image.clone(), mesh.faces().to_vec());
        let reach = mesh
            .topology()
            .edges
            .iter()
            .map(|&[a, b]| (image[a] - image[b]).norm())
            .fold(0.0, f64::max);
        MappedMesh {
            mesh,
            image,
            obstacles,
            jacobians,
            locator,
            reach,
        }
    }

    pub fn lambda(&self, f: usize) -> f64 {
        self.jacobians[f].lambda
    }

    pub fn locator(&self) -> &PlanarLocator {
        &self.locator
    }

    /// Whether `q` lies in the unit disk and outside every obstacle circle.
    pub fn in_domain(&self, q: Complex2) -> bool {
        q.norm() < 1.0 && self.obstacles.iter().all(|c| (q - c.center).norm() > c.radius)
    }

    /// Surface point of a face and barycentric weights.
    pub fn surface_point(&self, f: usize, bary: [f64; 3]) -> crate::mesh::Vec3 {
        let fc = self.mesh.faces()[f];
        let p = self.mesh.vertices();
        p[fc[0]] * bary[0] + p[fc[1]] * bary[1] + p[fc[2]] * bary[2]
    }

    /// Image of a surface point given by face and barycentric weights.
    pub fn image_point(&self, f: usize, bary: [f64; 3]) -> Complex2 {
        let fc = self.mesh.faces()[f];
        self.image[fc[0]] * bary[0] + self.image[fc[1]] * bary[1] + self.image[fc[2]] * bary[2]
    }

    pub fn report(&self, stages: Vec<StageRecord>) -> DistortionReport {
        let total: f64 = (0..self.mesh.n_faces()).map(|f| self.mesh.face_area(f)).sum();
        let mean_mu = self
            .jacobians
            .iter()
            .enumerate()
            .map(|(f, j)| j.mu * self.mesh.face_area(f))
            .sum::<f64>()
            / total;
        let max_mu = self.jacobians.iter().map(|j| j.mu).fold(0.0, f64::max);
        let radial_deviation = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(k, c)| {
                self.mesh
                    .obstacle_loop(k)
                    .vertices
                    .iter()
                    .map(|&v| ((self.image[v] - c.center).norm() - c.radius).abs() / c.radius)
                    .fold(0.0, f64::max)
            })
            .collect();
        let outer_deviation = self
            .mesh
            .outer_loop()
            .vertices
            .iter()
            .map(|&v| (self.image[v].norm() - 1.0).abs())
            .fold(0.0, f64::max);
        let flipped_faces = self.jacobians.iter().filter(|j| !(j.j.determinant() > 0.0)).count();
        DistortionReport {
            mean_mu,
            max_mu,
            radial_deviation,
            outer_deviation,
            flipped_faces,
            stages,
        }
    }
}

/// Point location of `q ∈ Ξ` in the image triangulation. Points in the thin
/// sliver between a boundary chord and its circle snap to the nearest face.
pub fn inverse_map(mm: &MappedMesh, q: Complex2) -> Result<(usize, [f64; 3])> {
    if !mm.in_domain(q) {
        return Err(Error::OutOfDomain);
    }
    mm.locator.locate_or_nearest(q, mm.reach)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at(name))
}

/// Runs the full pipeline: per-region disk maps, chain welding and annulus
/// maps, then the global weld, rectification, inflation and the harmonic
/// extension.
pub fn build_mapping(mesh: &TriMesh, subs: &[Subdomain], gens: &GeneratorSet, opts: &MapOptions) -> Result<(MappedMesh, DistortionReport)> {
    let n = mesh.obstacle_count();
    let mut records = Vec::new();
    let staged = if n == 0 {
        let patch = stage("disk map", Patch::from_faces(mesh, &obstacle_regions(subs, gens, 0)[0]))?;
        let pm = stage("disk map", disk_map_patch(&patch, 0))?;
        let mut img = vec![Complex2::new(0.0, 0.0); mesh.n_vertices()];
        for (l, &g) in pm.vertices.global.iter().enumerate() {
            img[g] = pm.vertices.image[l];
        }
        img
    } else {
        let regions = obstacle_regions(subs, gens, n);
        let mut annuli = Vec::with_capacity(n);
        for k in 0..n {
            let cells: Vec<&Subdomain> = gens.obstacle_assignment[k].iter().map(|&g| &subs[g]).collect();
            if cells.len() > 1 || cells[0].kind == SubdomainKind::TypeI {
                let order = stage("chain order", order_chain(&cells))?;
                let chain: Vec<&Subdomain> = order.iter().map(|&i| cells[i]).collect();
                let patches = chain
                    .iter()
                    .map(|c| stage("disk map", disk_map(mesh, c)))
                    .collect::<Result<Vec<_>>>()?;
                let welds = stage("local weld", weld_chain(mesh, &chain, &patches, opts.weld_tol))?;
                for w in &welds {
                    records.push(StageRecord {
                        stage: "local weld".into(),
                        region: Some(k),
                        residual: w.residual,
                    });
                }
                let ci = stage("compose", compose_unified(mesh, &chain, &patches, &welds, opts.closure_tol))?;
                records.push(StageRecord {
                    stage: "chain closure".into(),
                    region: Some(k),
                    residual: ci.closure,
                });
            }
            let am = stage("annulus map", annulus_map(mesh, &regions[k], k))?;
            records.push(StageRecord {
                stage: "annulus modulus".into(),
                region: Some(k),
                residual: am.modulus,
            });
            annuli.push(am);
        }
        let interfaces = region_interfaces(mesh, &regions);
        let gw = stage("global weld", global_weld(mesh, &annuli, &interfaces))?;
        records.push(StageRecord {
            stage: "global weld".into(),
            region: None,
            residual: gw.energy,
        });
        combine(mesh, &annuli, &gw.transforms)
    };
    let rect = stage("rectify", rectify_boundaries(mesh, &staged))?;
    let (values, circles) = if opts.refine_iter > 0 {
        let r = stage("refine", refine_circle_domain(mesh, &rect.values, &rect.circles, opts.refine_iter))?;
        records.push(StageRecord {
            stage: "refine".into(),
            region: None,
            residual: r.energy_after,
        });
        (r.values, r.circles)
    } else {
        (rect.values, rect.circles)
    };
    let pre = stage("harmonic extension", solve_harmonic_extension(mesh, &values))?;
    let s = optimize_mobius_inflation(mesh, &pre, &circles);
    records.push(StageRecord {
        stage: "inflation".into(),
        region: None,
        residual: s.a.norm(),
    });
    let boundary: Vec<Option<Complex2>> = values
        .iter()
        .map(|o| o.map(|z| mobius_apply(z, &s).unwrap_or(z)))
        .collect();
    let image = stage("harmonic extension", solve_harmonic_extension(mesh, &boundary))?;
    let mm = stage("assemble", MappedMesh::new(mesh.clone(), image))?;
    let report = mm.report(records);
    Ok((mm, report))
}

/// Shared edges between distinct obstacle regions, as `(k, l, edges)`.
pub(crate) fn region_interfaces(mesh: &TriMesh, regions: &[Vec<usize>]) -> Vec<(usize, usize, Vec<usize>)> {
    let mut owner = vec![NONE; mesh.n_faces()];
    for (k, fs) in regions.iter().enumerate() {
        for &f in fs {
            owner[f] = k;
        }
    }
    let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (e, fs) in mesh.topology().edge_faces.iter().enumerate() {
        if fs[0] == NONE || fs[1] == NONE {
            continue;
        }
        let (a, b) = (owner[fs[0]], owner[fs[1]]);
        if a != b && a != NONE && b != NONE {
            by_pair.entry((a.min(b), a.max(b))).or_default().push(e);
        }
    }
    by_pair.into_iter().map(|((a, b), e)| (a, b, e)).collect()
}

fn combine(mesh: &TriMesh, annuli: &[AnnulusMap], t: &[crate::geometry::SimilarityParams]) -> Vec<Complex2> {
    let mut sum = vec![(Complex2::new(0.0, 0.0), 0usize); mesh.n_vertices()];
    for (k, a) in annuli.iter().enumerate() {
        for (l, &g) in a.vertices.global.iter().enumerate() {
            sum[g].0 += t[k].alpha * a.vertices.image[l] + t[k].gamma;
            sum[g].1 += 1;
        }
    }
    sum.into_iter().map(|(s, c)| s / c.max(1) as f64).collect()
}

pub fn write_mapped(mm: &MappedMesh) -> String {
    let mut s = String::from("mappedmesh 1\n");
    let _ = writeln!(s, "n {} {} {}", mm.image.len(), mm.jacobians.len(), mm.obstacles.len());
    for z in &mm.image {
        let _ = writeln!(s, "v {:.17e} {:.17e}", z.re, z.im);
    }
    for j in &mm.jacobians {
        let _ = writeln!(
            s,
            "j {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            j.j[(0, 0)],
            j.j[(0, 1)],
            j.j[(1, 0)],
            j.j[(1, 1)],
            j.lambda,
            j.mu
        );
    }
    for c in &mm.obstacles {
        let _ = writeln!(s, "c {:.17e} {:.17e} {:.17e}", c.center.re, c.center.im, c.radius);
    }
    s
}

/// Reads a map written by [`write_mapped`] for the given source mesh.
pub fn parse_mapped(mesh: TriMesh, text: &str) -> Result<MappedMesh> {
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut header = false;
    let mut counts = None;
    let mut image = Vec::new();
    let mut jac = Vec::new();
    let mut circles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if !header {
            if tok != ["mappedmesh", "1"] {
                return Err(perr(ln, "expected header `mappedmesh 1`"));
            }
            header = true;
            continue;
        }
        let nums = |k: usize| -> Result<Vec<f64>> {
            if tok.len() != k + 1 {
                return Err(perr(ln, "wrong field count"));
            }
            tok[1..].iter().map(|t| t.parse::<f64>().map_err(|_| perr(ln, "bad number"))).collect()
        };
        match tok[0] {
            "n" => {
                let x = nums(3)?;
                counts = Some((x[0] as usize, x[1] as usize, x[2] as usize));
            }
            "v" => {
                let x = nums(2)?;
                image.push(Complex2::new(x[0], x[1]));
            }
            "j" => {
                let x = nums(6)?;
                jac.push(FaceJacobian {
                    j: Matrix2::new(x[0], x[1], x[2], x[3]),
                    lambda: x[4],
                    mu: x[5],
                });
            }
            "c" => {
                let x = nums(3)?;
                circles.push(Circle::new(Complex2::new(x[0], x[1]), x[2]));
            }
            _ => return Err(perr(ln, "unknown record")),
        }
    }
    let Some((nv, nf, no)) = counts else {
        return Err(perr(0, "missing count line"));
    };
    if nv != image.len() || nf != jac.len() || no != circles.len() {
        return Err(perr(0, "record counts differ from the count line"));
    }
    if nv != mesh.n_vertices() || nf != mesh.n_faces() || no != mesh.obstacle_count() {
        return Err(Error::InvalidMesh("mapped mesh does not match the source mesh".into()));
    }
    Ok(MappedMesh::assemble(mesh, image, circles, jac))
}

pub fn read_mapped(mesh: TriMesh, path: &Path) -> Result<MappedMesh> {
    parse_mapped(mesh, &std::fs::read_to_string(path)?)
}

pub fn save_mapped(mm: &MappedMesh, path: &Path) -> Result<()> {
    std::fs::write(path, write_mapped(mm))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::gvt_partition;
    use crate::mesh::gen;

    #[test]
    fn flat_disk_is_near_identity() {
        let m = gen::flat_disk(1.0, 0.1).unwrap();
        let gens = GeneratorSet {
            points: vec![0],
            obstacle_assignment: vec![],
            star_shaped: vec![],
        };
        let subs = gvt_partition(&m, &gens).unwrap();
        let (mm, rep) = build_mapping(&m, &subs, &gens, &MapOptions::default()).unwrap();
        assert!(rep.mean_mu < 1e-3, "mean mu {}", rep.mean_mu);
        assert_eq!(rep.flipped_faces, 0);
        let back = parse_mapped(m.clone(), &write_mapped(&mm)).unwrap();
        assert_eq!(back.image, mm.image);
        assert_eq!(back.obstacles, mm.obstacles);
    }

    #[test]
    fn inverse_of_vertex_image_is_that_vertex() {
        let m = gen::flat_disk(1.0, 0.15).unwrap();
        let img: Vec<Complex2> = m.vertices().iter().map(|p| Complex2::new(p.x, p.y) * 0.99).collect();
        let mm = MappedMesh::new(m.clone(), img).unwrap();
        for v in [3, 10, 40] {
            let (f, b) = inverse_map(&mm, mm.image[v]).unwrap();
            let p = mm.surface_point(f, b);
            assert!((p - m.vertices()[v]).norm() < 1e-9);
        }
        assert!(matches!(inverse_map(&mm, Complex2::new(1.2, 0.0)), Err(Error::OutOfDomain)));
    }
}
