//! Synthetic test surfaces: structured flat annuli and Delaunay meshes of a
//! disk with star-shaped holes, optionally lifted by a height field.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::{LoopLabel, TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoleShape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        a: f64,
        b: f64,
        angle: f64,
    },
    /// `r (1 + amp cos(lobes t))` in polar form about the centre.
    Lobed {
        center: [f64; 2],
        radius: f64,
        lobes: u32,
        amp: f64,
        angle: f64,
    },
}

impl HoleShape {
    pub fn center(&self) -> [f64; 2] {
        match *self {
            HoleShape::Circle { center, .. }
            | HoleShape::Ellipse { center, .. }
            | HoleShape::Lobed { center, .. } => center,
        }
    }

    /// Polar radius in direction `theta` about the centre.
    pub fn radius_at(&self, theta: f64) -> f64 {
        match *self {
            HoleShape::Circle { radius, .. } => radius,
            HoleShape::Ellipse { a, b, angle, .. } => {
                let t = theta - angle;
                a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt()
            }
            HoleShape::Lobed {
                radius,
                lobes,
                amp,
                angle,
                ..
            } => radius * (1.0 + amp * (lobes as f64 * (theta - angle)).cos()),
        }
    }

    fn point(&self, theta: f64) -> [f64; 2] {
        let c = self.center();
        let r = self.radius_at(theta);
        [c[0] + r * theta.cos(), c[1] + r * theta.sin()]
    }

    fn contains_with_margin(&self, p: [f64; 2], margin: f64) -> bool {
        let c = self.center();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        (dx * dx + dy * dy).sqrt() < self.radius_at(dy.atan2(dx)) + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeightField {
    #[default]
    Flat,
    /// Smooth bumps `amp cos(1.2x) sin(0.9y + 0.4) + 0.3 amp x y`.
    Bumps { amp: f64 },
}

impl HeightField {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            HeightField::Flat => 0.0,
            HeightField::Bumps { amp } => {
                amp * (1.2 * x).cos() * (0.9 * y + 0.4).sin() + 0.3 * amp * x * y
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub outer_radius: f64,
    pub holes: Vec<HoleShape>,
    /// Target edge length.
    pub spacing: f64,
    #[serde(default)]
    pub height: HeightField,
}

/// Samples a closed curve at roughly uniform arc length.
fn sample_closed<F: Fn(f64) -> [f64; 2]>(curve: F, spacing: f64, min: usize) -> Vec<[f64; 2]> {
    let fine = 2048;
    let pts: Vec<[f64; 2]> = (0..=fine).map(|i| curve(TAU * i as f64 / fine as f64)).collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let n = ((total / spacing).round() as usize).max(min);
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = total * i as f64 / n as f64;
        while cum[j + 1] < s {
            j += 1;
        }
        let t = (s - cum[j]) / (cum[j + 1] - cum[j]).max(1e-300);
        let a = TAU * j as f64 / fine as f64;
        let b = TAU * (j + 1) as f64 / fine as f64;
        out.push(curve(a + t * (b - a)));
    }
    out
}

fn inside_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Hexagonal lattice points inside a disk of radius `r`.
fn hex_lattice(r: f64, h: f64) -> Vec<[f64; 2]> {
    let dy = h * 3f64.sqrt() / 2.0;
    let rows = (r / dy).ceil() as i64 + 1;
    let cols = (r / h).ceil() as i64 + 1;
    let mut out = Vec::new();
    for j in -rows..=rows {
        let y = j as f64 * dy;
        let shift = if j.rem_euclid(2) == 1 { h / 2.0 } else { 0.0 };
        for i in -cols..=cols {
            let x = i as f64 * h + shift;
            if x * x + y * y < r * r {
                out.push([x, y]);
            }
        }
    }
    out
}

/// Delaunay mesh of the disk of radius `outer_radius` minus the holes.
pub fn surface(spec: &SurfaceSpec) -> Result<TriMesh> {
    let h = spec.spacing;
    let r_out = spec.outer_radius;
    if !(h > 0.0) || !(r_out > 0.0) {
        return Err(Error::InvalidMesh("spacing and radius must be positive".into()));
    }
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut constraints: Vec<[usize; 2]> = Vec::new();
    let mut polys: Vec<Vec<[f64; 2]>> = Vec::new();
    let outer = sample_closed(|t| [r_out * t.cos(), r_out * t.sin()], h, 12);
    let mut push_loop = |pts: &[[f64; 2]], points: &mut Vec<[f64; 2]>| {
        let base = points.len();
        points.extend_from_slice(pts);
        for i in 0..pts.len() {
            constraints.push([base + i, base + (i + 1) % pts.len()]);
        }
    };
    push_loop(&outer, &mut points);
    polys.push(outer);
    for hole in &spec.holes {
        let pts = sample_closed(|t| hole.point(t), h, 8);
        push_loop(&pts, &mut points);
        polys.push(pts);
    }
    let margin = 0.6 * h;
    for p in hex_lattice(r_out - margin, h) {
        if spec.holes.iter().all(|o| !o.contains_with_margin(p, margin)) {
            points.push(p);
        }
    }
    let verts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(verts, constraints)
        .map_err(|e| Error::InvalidMesh(format!("triangulation failed: {e:?}")))?;
    if cdt.num_vertices() != points.len() {
        return Err(Error::InvalidMesh("duplicate points in surface sampling".into()));
    }
    let mut faces = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices();
        let idx = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        let c = [
            (points[idx[0]][0] + points[idx[1]][0] + points[idx[2]][0]) / 3.0,
            (points[idx[0]][1] + points[idx[1]][1] + points[idx[2]][1]) / 3.0,
        ];
        if inside_polygon(c, &polys[0]) && polys[1..].iter().all(|p| !inside_polygon(c, p)) {
            faces.push(idx);
        }
    }
    finish(&points, faces, spec)
}

fn finish(points: &[[f64; 2]], faces: Vec<[usize; 3]>, spec: &SurfaceSpec) -> Result<TriMesh> {
    let mut remap = vec![usize::MAX; points.len()];
    let mut verts = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in faces {
        let mut g = [0; 3];
        for (j, &v) in f.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = verts.len();
                let [x, y] = points[v];
                verts.push(Vec3::new(x, y, spec.height.eval(x, y)));
            }
            g[j] = remap[v];
        }
        out_faces.push(g);
    }
    let centers: Vec<[f64; 2]> = spec.holes.iter().map(|h| h.center()).collect();
    let xy: Vec<[f64; 2]> = verts.iter().map(|p| [p.x, p.y]).collect();
    let r_out = spec.outer_radius;
    TriMesh::with_labels(verts, out_faces, |cyc| label_loop(cyc, &xy, &centers, r_out))
}

fn label_loop(cyc: &[usize], xy: &[[f64; 2]], centers: &[[f64; 2]], r_out: f64) -> LoopLabel {
    let n = cyc.len() as f64;
    let mean_r = cyc.iter().map(|&v| (xy[v][0].powi(2) + xy[v][1].powi(2)).sqrt()).sum::<f64>() / n;
    if (mean_r - r_out).abs() < 1e-9 * r_out.max(1.0) {
        return LoopLabel::Outer;
    }
    let cx = cyc.iter().map(|&v| xy[v][0]).sum::<f64>() / n;
    let cy = cyc.iter().map(|&v| xy[v][1]).sum::<f64>() / n;
    let k = centers
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1[0] - cx).powi(2) + (a.1[1] - cy).powi(2);
            let db = (b.1[0] - cx).powi(2) + (b.1[1] - cy).powi(2);
            da.total_cmp(&db)
        })
        .map(|(k, _)| k)
        .unwrap_or(0);
    LoopLabel::Obstacle(k)
}

/// Flat Delaunay disk with `round(2πR/h)` boundary vertices starting at angle 0.
pub fn flat_disk(radius: f64, spacing: f64) -> Result<TriMesh> {
    surface(&SurfaceSpec {
        outer_radius: radius,
        holes: vec![],
        spacing,
        height: HeightField::Flat,
    })
}

/// Structured flat annulus with odd rings rotated by half a segment. Ring
/// radii are geometric when `log_spaced`.
pub fn flat_annulus(r_in: f64, r_out: f64, rings: usize, segments: usize, log_spaced: bool) -> TriMesh {
    annulus_grid(r_in, r_out, rings, segments, log_spaced, true)
}

/// Structured flat annulus; `stagger` rotates odd rings by half a segment.
pub fn annulus_grid(r_in: f64, r_out: f64, rings: usize, segments: usize, log_spaced: bool, stagger: bool) -> TriMesh {
    assert!(rings >= 1 && segments >= 3 && r_in > 0.0 && r_out > r_in);
    let mut verts = Vec::new();
    for j in 0..=rings {
        let s = j as f64 / rings as f64;
        let r = if log_spaced {
            r_in * (r_out / r_in).powf(s)
        } else {
            r_in + (r_out - r_in) * s
        };
        let shift = if stagger && j % 2 == 1 { 0.5 } else { 0.0 };
        for k in 0..segments {
            let a = TAU * (k as f64 + shift) / segments as f64;
            verts.push(Vec3::new(r * a.cos(), r * a.sin(), 0.0));
        }
    }
    let id = |j: usize, k: usize| j * segments + k % segments;
    let mut faces = Vec::new();
    for j in 0..rings {
        for k in 0..segments {
            if !stagger {
                faces.push([id(j, k), id(j + 1, k), id(j, k + 1)]);
                faces.push([id(j, k + 1), id(j + 1, k), id(j + 1, k + 1)]);
            } else if j % 2 == 0 {
                // upper ring is shifted forward
                faces.push([id(j, k), id(j + 1, k), id(j, k + 1)]);
                faces.push([id(j, k + 1), id(j + 1, k), id(j + 1, k + 1)]);
            } else {
                faces.push([id(j, k), id(j + 1, k), id(j + 1, k + 1)]);
                faces.push([id(j, k), id(j + 1, k + 1), id(j, k + 1)]);
            }
        }
    }
    let n = verts.len();
    let outer_start = rings * segments;
    TriMesh::with_labels(verts, faces, |c| {
        if c.iter().all(|&v| v >= outer_start && v < n) {
            LoopLabel::Outer
        } else {
            LoopLabel::Obstacle(0)
        }
    })
    .expect("structured annulus is valid")
}

/// Geometric-ring annulus where every quad gets a centre vertex, so the mesh
/// is mirror symmetric about each radial line through a ring vertex.
pub fn centred_annulus(r_in: f64, r_out: f64, rings: usize, segments: usize) -> TriMesh {
    assert!(rings >= 1 && segments >= 3 && r_in > 0.0 && r_out > r_in);
    let radius = |s: f64| r_in * (r_out / r_in).powf(s);
    let mut verts = Vec::new();
    for j in 0..=rings {
        let r = radius(j as f64 / rings as f64);
        for k in 0..segments {
            let a = TAU * k as f64 / segments as f64;
            verts.push(Vec3::new(r * a.cos(), r * a.sin(), 0.0));
        }
    }
    let id = |j: usize, k: usize| j * segments + k % segments;
    let mut faces = Vec::new();
    for j in 0..rings {
        let r = radius((j as f64 + 0.5) / rings as f64);
        for k in 0..segments {
            let a = TAU * (k as f64 + 0.5) / segments as f64;
            let m = verts.len();
            verts.push(Vec3::new(r * a.cos(), r * a.sin(), 0.0));
            let (p, q, u, w) = (id(j, k), id(j + 1, k), id(j + 1, k + 1), id(j, k + 1));
            faces.extend([[p, q, m], [q, u, m], [u, w, m], [w, p, m]]);
        }
    }
    let outer: Vec<usize> = (0..segments).map(|k| id(rings, k)).collect();
    TriMesh::with_labels(verts, faces, |c| {
        if c.iter().all(|v| outer.contains(v)) {
            LoopLabel::Outer
        } else {
            LoopLabel::Obstacle(0)
        }
    })
    .expect("structured annulus is valid")
}

/// Three holes of assorted shapes on a bumpy disk of radius 1.5.
pub fn three_hole_spec() -> SurfaceSpec {
    let c = |r: f64, deg: f64| [r * (deg * PI / 180.0).cos(), r * (deg * PI / 180.0).sin()];
    SurfaceSpec {
        outer_radius: 1.5,
        holes: vec![
            HoleShape::Ellipse {
                center: c(0.8, 90.0),
                a: 0.3,
                b: 0.2,
                angle: 0.3,
            },
            HoleShape::Circle {
                center: c(0.8, 210.0),
                radius: 0.25,
            },
            HoleShape::Lobed {
                center: c(0.8, 330.0),
                radius: 0.25,
                lobes: 3,
                amp: 0.15,
                angle: 0.2,
            },
        ],
        spacing: 0.085,
        height: HeightField::Bumps { amp: 0.12 },
    }
}

/// Six holes on a ring around the centre of a bumpy disk of radius 1.5.
pub fn six_hole_spec() -> SurfaceSpec {
    let c = |r: f64, deg: f64| [r * (deg * PI / 180.0).cos(), r * (deg * PI / 180.0).sin()];
    SurfaceSpec {
        outer_radius: 1.5,
        holes: vec![
            HoleShape::Circle {
                center: c(0.9, 30.0),
                radius: 0.2,
            },
            HoleShape::Ellipse {
                center: c(0.85, 90.0),
                a: 0.24,
                b: 0.16,
                angle: 0.0,
            },
            HoleShape::Lobed {
                center: c(0.9, 150.0),
                radius: 0.19,
                lobes: 3,
                amp: 0.12,
                angle: 0.0,
            },
            HoleShape::Ellipse {
                center: c(0.9, 210.0),
                a: 0.22,
                b: 0.15,
                angle: 1.0,
            },
            HoleShape::Circle {
                center: c(0.85, 270.0),
                radius: 0.18,
            },
            HoleShape::Lobed {
                center: c(0.9, 330.0),
                radius: 0.18,
                lobes: 4,
                amp: 0.1,
                angle: 0.5,
            },
        ],
        spacing: 0.09,
        height: HeightField::Bumps { amp: 0.12 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_topology() {
        let m = flat_annulus(0.3, 1.0, 4, 16, true);
        assert_eq!(m.obstacle_count(), 1);
        assert_eq!(m.euler_characteristic(), 0);
        let area = m.total_area();
        let exact = PI * (1.0 - 0.09);
        assert!((area - exact).abs() / exact < 0.05);
    }

    #[test]
    fn disk_starts_at_angle_zero() {
        let m = flat_disk(1.0, 0.2).unwrap();
        assert_eq!(m.euler_characteristic(), 1);
        let v = m.vertices();
        assert!(m.outer_loop().vertices.iter().any(|&i| (v[i].x - 1.0).abs() < 1e-12 && v[i].y.abs() < 1e-12));
    }

    #[test]
    fn preset_surfaces_are_valid() {
        for (spec, n) in [(three_hole_spec(), 3), (six_hole_spec(), 6)] {
            let m = surface(&spec).unwrap();
            assert_eq!(m.obstacle_count(), n);
            assert_eq!(m.euler_characteristic(), 1 - n as i64);
            assert!(m.n_vertices() >= 500 && m.n_vertices() <= 2000, "{}", m.n_vertices());
            for k in 0..n {
                let c = spec.holes[k].center();
                let l = &m.obstacle_loop(k).vertices;
                let cx = l.iter().map(|&v| m.vertices()[v].x).sum::<f64>() / l.len() as f64;
                let cy = l.iter().map(|&v| m.vertices()[v].y).sum::<f64>() / l.len() as f64;
                assert!((cx - c[0]).hypot(cy - c[1]) < 0.05);
            }
        }
    }
}
