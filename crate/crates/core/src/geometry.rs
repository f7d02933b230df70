//! Planar primitives in the complex plane: disk automorphisms, similarities,
//! circle fitting, ray/circle intersection, arc sampling and point location.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Planar coordinate.
pub type Complex2 = Complex64;

/// Denominator tolerance below which a Möbius evaluation is refused.
pub const MOBIUS_TOL: f64 = 1e-12;

/// Disk automorphism `z ↦ e^{iφ}(z − a)/(1 − āz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusParams {
    pub phi: f64,
    pub a: Complex2,
}

impl MobiusParams {
    pub fn identity() -> Self {
        MobiusParams {
            phi: 0.0,
            a: Complex2::new(0.0, 0.0),
        }
    }

    pub fn new(phi: f64, a: Complex2) -> Result<Self> {
        if !(a.norm() < 1.0) || !phi.is_finite() {
            return Err(Error::DegenerateTransform);
        }
        Ok(MobiusParams {
            phi: phi.rem_euclid(TAU),
            a,
        })
    }

    pub fn inverse(&self) -> Self {
        MobiusParams {
            phi: (-self.phi).rem_euclid(TAU),
            a: -self.a * Complex2::from_polar(1.0, self.phi),
        }
    }

    pub fn to_matrix(&self) -> MobiusMatrix {
        let e = Complex2::from_polar(1.0, self.phi);
        MobiusMatrix {
            a: e,
            b: -e * self.a,
            c: -self.a.conj(),
            d: Complex2::new(1.0, 0.0),
        }
    }
}

/// `e^{iφ}(z − a)/(1 − āz)`.
pub fn mobius_apply(z: Complex2, m: &MobiusParams) -> Result<Complex2> {
    let den = Complex2::new(1.0, 0.0) - m.a.conj() * z;
    if den.norm() < MOBIUS_TOL {
        return Err(Error::DegenerateTransform);
    }
    Ok(Complex2::from_polar(1.0, m.phi) * (z - m.a) / den)
}

/// General fractional linear map `(az + b)/(cz + d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusMatrix {
    pub a: Complex2,
    pub b: Complex2,
    pub c: Complex2,
    pub d: Complex2,
}

impl MobiusMatrix {
    pub fn identity() -> Self {
        let one = Complex2::new(1.0, 0.0);
        let zero = Complex2::new(0.0, 0.0);
        MobiusMatrix {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    /// `z ↦ 1/z`.
    pub fn inversion() -> Self {
        let one = Complex2::new(1.0, 0.0);
        let zero = Complex2::new(0.0, 0.0);
        MobiusMatrix {
            a: zero,
            b: one,
            c: one,
            d: zero,
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, o: &MobiusMatrix) -> MobiusMatrix {
        MobiusMatrix {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn apply(&self, z: Complex2) -> Result<Complex2> {
        let den = self.c * z + self.d;
        let scale = (self.c.norm() + self.d.norm()).max(1e-300);
        if den.norm() < MOBIUS_TOL * scale {
            return Err(Error::DegenerateTransform);
        }
        Ok((self.a * z + self.b) / den)
    }
}

/// Similarity `z ↦ αz + γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityParams {
    pub alpha: Complex2,
    pub gamma: Complex2,
}

impl SimilarityParams {
    pub fn identity() -> Self {
        SimilarityParams {
            alpha: Complex2::new(1.0, 0.0),
            gamma: Complex2::new(0.0, 0.0),
        }
    }

    pub fn inverse(&self) -> Self {
        SimilarityParams {
            alpha: 1.0 / self.alpha,
            gamma: -self.gamma / self.alpha,
        }
    }
}

pub fn similarity_apply(z: Complex2, t: &SimilarityParams) -> Complex2 {
    t.alpha * z + t.gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Complex2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Complex2, radius: f64) -> Self {
        Circle { center, radius }
    }

    pub fn point_at(&self, angle: f64) -> Complex2 {
        self.center + Complex2::from_polar(self.radius, angle)
    }

    /// Signed distance from `p` to the circle (positive outside).
    pub fn clearance(&self, p: Complex2) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

/// Algebraic least-squares circle: minimises Σ (|p|² + D·x + E·y + F)².
pub fn fit_circle(points: &[Complex2]) -> Result<Circle> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit);
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex2>() / n;
    let scale = (points.iter().map(|p| (p - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateFit);
    }
    let mut a = DMatrix::<f64>::zeros(points.len(), 3);
    let mut b = DVector::<f64>::zeros(points.len());
    for (i, p) in points.iter().enumerate() {
        let q = (p - mean) / scale;
        a[(i, 0)] = q.re;
        a[(i, 1)] = q.im;
        a[(i, 2)] = 1.0;
        b[i] = -q.norm_sqr();
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::DegenerateFit);
    }
    let sol = svd.solve(&b, 1e-14).map_err(|_| Error::DegenerateFit)?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let c = Complex2::new(-d / 2.0, -e / 2.0);
    let r2 = c.norm_sqr() - f;
    if !(r2 > 0.0) {
        return Err(Error::DegenerateFit);
    }
    Ok(Circle {
        center: mean + c * scale,
        radius: r2.sqrt() * scale,
    })
}

/// Roots of `|b|²ξ² − 2(b·o)ξ + |o|² − r² = 0` clipped to the unit ray `[0, 1]`.
pub fn line_circle_intersect(direction: Complex2, circle: &Circle) -> Option<(f64, f64)> {
    let bb = direction.norm_sqr();
    if bb == 0.0 {
        return None;
    }
    let bo = direction.re * circle.center.re + direction.im * circle.center.im;
    let c = circle.center.norm_sqr() - circle.radius * circle.radius;
    let disc = bo * bo - bb * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // stable pairing of the two roots
    let (lo, hi) = if bo >= 0.0 {
        let q = bo + s;
        let r1 = q / bb;
        let r2 = if q != 0.0 { c / q } else { r1 };
        (r2.min(r1), r2.max(r1))
    } else {
        let q = bo - s;
        let r1 = q / bb;
        let r2 = if q != 0.0 { c / q } else { r1 };
        (r1.min(r2), r1.max(r2))
    };
    if hi < 0.0 || lo > 1.0 {
        return None;
    }
    Some((lo.max(0.0), hi.min(1.0)))
}

/// Signed angular sweep from `from` to `to`: the shorter way round, with an
/// exact half turn going counterclockwise.
pub fn shorter_sweep(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// `samples` points on `circle` from angle `psi_in` to `psi_out`, the shorter way round.
pub fn arc_polyline(circle: &Circle, psi_in: f64, psi_out: f64, samples: usize) -> Vec<Complex2> {
    let mut out = arc_sweep(circle, psi_in, shorter_sweep(psi_in, psi_out), samples);
    let last = out.len() - 1;
    out[last] = circle.point_at(psi_out);
    out
}

/// `samples` points on `circle` from angle `psi_in` through the signed `sweep`.
pub fn arc_sweep(circle: &Circle, psi_in: f64, sweep: f64, samples: usize) -> Vec<Complex2> {
    assert!(samples >= 2, "arc needs at least two samples");
    let last = samples - 1;
    (0..samples)
        .map(|u| {
            let ang = if u == last {
                psi_in + sweep
            } else {
                psi_in + sweep * u as f64 / last as f64
            };
            circle.point_at(ang)
        })
        .collect()
}

/// Barycentric coordinates of `q` in triangle `(a, b, c)`.
pub fn barycentric(q: Complex2, a: Complex2, b: Complex2, c: Complex2) -> Option<[f64; 3]> {
    let cross = |u: Complex2, v: Complex2| u.re * v.im - u.im * v.re;
    let area = cross(b - a, c - a);
    if area.abs() < 1e-300 {
        return None;
    }
    let l0 = cross(b - q, c - q) / area;
    let l1 = cross(c - q, a - q) / area;
    let l2 = 1.0 - l0 - l1;
    Some([l0, l1, l2])
}

/// Tolerance on barycentric coordinates accepted by the locators.
pub const LOCATE_TOL: f64 = 1e-9;

/// Faces below this count are scanned directly.
pub const GRID_THRESHOLD: usize = 5000;

/// Containing face and barycentric triple of `q` by scanning every face.
pub fn point_locate(
    positions: &[Complex2],
    faces: &[[usize; 3]],
    q: Complex2,
) -> Result<(usize, [f64; 3])> {
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (fi, f) in faces.iter().enumerate() {
        if let Some(l) = barycentric(q, positions[f[0]], positions[f[1]], positions[f[2]]) {
            let worst = l[0].min(l[1]).min(l[2]);
            if worst >= -LOCATE_TOL && best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((fi, l, worst));
            }
        }
    }
    best.map(|(f, l, _)| (f, l)).ok_or(Error::OutOfDomain)
}

/// Point locator over a planar triangulation. Small meshes are scanned face by
/// face; larger ones (or callers asking for it) use a uniform bucket grid.
#[derive(Debug, Clone)]
pub struct PlanarLocator {
    positions: Vec<Complex2>,
    faces: Vec<[usize; 3]>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone)]
struct Grid {
    lo: Complex2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl PlanarLocator {
    pub fn new(positions: Vec<Complex2>, faces: Vec<[usize; 3]>) -> Self {
        let use_grid = faces.len() >= GRID_THRESHOLD;
        Self::build(positions, faces, use_grid)
    }

    pub fn with_grid(positions: Vec<Complex2>, faces: Vec<[usize; 3]>) -> Self {
        Self::build(positions, faces, true)
    }

    fn build(positions: Vec<Complex2>, faces: Vec<[usize; 3]>, use_grid: bool) -> Self {
        let grid = if use_grid && !faces.is_empty() {
            Some(Grid::new(&positions, &faces))
        } else {
            None
        };
        PlanarLocator {
            positions,
            faces,
            grid,
        }
    }

    pub fn positions(&self) -> &[Complex2] {
        &self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    fn bary(&self, fi: usize, q: Complex2) -> Option<[f64; 3]> {
        let f = self.faces[fi];
        barycentric(q, self.positions[f[0]], self.positions[f[1]], self.positions[f[2]])
    }

    pub fn locate(&self, q: Complex2) -> Result<(usize, [f64; 3])> {
        match &self.grid {
            None => point_locate(&self.positions, &self.faces, q),
            Some(g) => {
                let Some(cell) = g.cell_of(q) else {
                    return Err(Error::OutOfDomain);
                };
                let mut best: Option<(usize, [f64; 3], f64)> = None;
                for &fi in &g.buckets[cell] {
                    let fi = fi as usize;
                    if let Some(l) = self.bary(fi, q) {
                        let worst = l[0].min(l[1]).min(l[2]);
                        if worst >= -LOCATE_TOL && best.as_ref().is_none_or(|b| worst > b.2) {
                            best = Some((fi, l, worst));
                        }
                    }
                }
                best.map(|(f, l, _)| (f, l)).ok_or(Error::OutOfDomain)
            }
        }
    }

    /// Like [`locate`](Self::locate), but a point within `reach` of the
    /// triangulation snaps to the closest face with clamped coordinates.
    pub fn locate_or_nearest(&self, q: Complex2, reach: f64) -> Result<(usize, [f64; 3])> {
        if let Ok(hit) = self.locate(q) {
            return Ok(hit);
        }
        let candidates: Vec<usize> = match &self.grid {
            None => (0..self.faces.len()).collect(),
            Some(g) => g.faces_near(q, reach),
        };
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for fi in candidates {
            let f = self.faces[fi];
            let (p, l) = closest_on_triangle(
                q,
                self.positions[f[0]],
                self.positions[f[1]],
                self.positions[f[2]],
            );
            let d = (p - q).norm();
            if d <= reach && best.as_ref().is_none_or(|b| d < b.2) {
                best = Some((fi, l, d));
            }
        }
        best.map(|(f, l, _)| (f, l)).ok_or(Error::OutOfDomain)
    }
}

impl Grid {
    fn new(positions: &[Complex2], faces: &[[usize; 3]]) -> Self {
        let mut lo = Complex2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Complex2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in positions {
            lo.re = lo.re.min(p.re);
            lo.im = lo.im.min(p.im);
            hi.re = hi.re.max(p.re);
            hi.im = hi.im.max(p.im);
        }
        let w = (hi.re - lo.re).max(1e-12);
        let h = (hi.im - lo.im).max(1e-12);
        let target = (faces.len() as f64 / 2.0).max(1.0);
        let cell = (w * h / target).sqrt().max(1e-12);
        let nx = ((w / cell).ceil() as usize).max(1);
        let ny = ((h / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let pad = 1e-9 * cell.max(1.0);
        for (fi, f) in faces.iter().enumerate() {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in f {
                x0 = x0.min(positions[v].re);
                y0 = y0.min(positions[v].im);
                x1 = x1.max(positions[v].re);
                y1 = y1.max(positions[v].im);
            }
            let ix0 = (((x0 - pad - lo.re) / cell).floor().max(0.0) as usize).min(nx - 1);
            let ix1 = (((x1 + pad - lo.re) / cell).floor().max(0.0) as usize).min(nx - 1);
            let iy0 = (((y0 - pad - lo.im) / cell).floor().max(0.0) as usize).min(ny - 1);
            let iy1 = (((y1 + pad - lo.im) / cell).floor().max(0.0) as usize).min(ny - 1);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    buckets[iy * nx + ix].push(fi as u32);
                }
            }
        }
        Grid {
            lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn cell_of(&self, q: Complex2) -> Option<usize> {
        let fx = (q.re - self.lo.re) / self.cell;
        let fy = (q.im - self.lo.im) / self.cell;
        let eps = 1e-9;
        if fx < -eps || fy < -eps || fx > self.nx as f64 + eps || fy > self.ny as f64 + eps {
            return None;
        }
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        Some(iy * self.nx + ix)
    }

    fn faces_near(&self, q: Complex2, reach: f64) -> Vec<usize> {
        let r = (reach / self.cell).ceil() as i64 + 1;
        let cx = ((q.re - self.lo.re) / self.cell).floor() as i64;
        let cy = ((q.im - self.lo.im) / self.cell).floor() as i64;
        let mut out = Vec::new();
        for iy in (cy - r).max(0)..=(cy + r).min(self.ny as i64 - 1) {
            for ix in (cx - r).max(0)..=(cx + r).min(self.nx as i64 - 1) {
                out.extend(self.buckets[iy as usize * self.nx + ix as usize].iter().map(|&f| f as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Closest point of a triangle to `q`, with its barycentric coordinates.
pub fn closest_on_triangle(q: Complex2, a: Complex2, b: Complex2, c: Complex2) -> (Complex2, [f64; 3]) {
    if let Some(l) = barycentric(q, a, b, c) {
        if l.iter().all(|&x| x >= 0.0) {
            return (q, l);
        }
    }
    let seg = |p: Complex2, s: Complex2, t: Complex2| -> (Complex2, f64) {
        let d = t - s;
        let len2 = d.norm_sqr();
        let u = if len2 > 0.0 {
            (((p - s) * d.conj()).re / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (s + d * u, u)
    };
    let (pab, uab) = seg(q, a, b);
    let (pbc, ubc) = seg(q, b, c);
    let (pca, uca) = seg(q, c, a);
    let cands = [
        (pab, [1.0 - uab, uab, 0.0]),
        (pbc, [0.0, 1.0 - ubc, ubc]),
        (pca, [uca, 0.0, 1.0 - uca]),
    ];
    let mut best = cands[0];
    for c in &cands[1..] {
        if (c.0 - q).norm() < (best.0 - q).norm() {
            best = *c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex2 {
        Complex2::new(re, im)
    }

    #[test]
    fn mobius_identity_and_origin() {
        let id = MobiusParams::identity();
        assert_eq!(mobius_apply(c(0.3, 0.0), &id).unwrap(), c(0.3, 0.0));
        let m = MobiusParams::new(0.0, c(0.5, 0.0)).unwrap();
        let w = mobius_apply(c(0.0, 0.0), &m).unwrap();
        assert!((w - c(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mobius_degenerate_denominator() {
        // |a| < 1 keeps the unit disk safe; a far-away z can still hit the pole 1/ā
        let m = MobiusParams::new(0.0, c(0.5, 0.0)).unwrap();
        assert!(matches!(mobius_apply(c(2.0, 0.0), &m), Err(Error::DegenerateTransform)));
        assert!(MobiusParams::new(0.0, c(1.0, 0.0)).is_err());
    }

    #[test]
    fn mobius_matrix_agrees_with_params() {
        let m = MobiusParams::new(1.1, c(0.2, -0.4)).unwrap();
        let mm = m.to_matrix();
        for z in [c(0.1, 0.2), c(-0.7, 0.3), c(0.0, 0.0)] {
            let a = mobius_apply(z, &m).unwrap();
            let b = mm.apply(z).unwrap();
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn similarity_examples() {
        let id = SimilarityParams::identity();
        assert_eq!(similarity_apply(c(0.4, -2.0), &id), c(0.4, -2.0));
        let t = SimilarityParams {
            alpha: c(0.0, 2.0),
            gamma: c(1.0, 0.0),
        };
        assert_eq!(similarity_apply(c(1.0, 0.0), &t), c(1.0, 2.0));
    }

    #[test]
    fn fit_circle_exact_and_degenerate() {
        let circ = fit_circle(&[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)]).unwrap();
        assert!(circ.center.norm() < 1e-12);
        assert!((circ.radius - 1.0).abs() < 1e-12);
        assert!(matches!(fit_circle(&[c(0.0, 0.0), c(1.0, 0.0)]), Err(Error::DegenerateFit)));
        let line: Vec<_> = (0..5).map(|i| c(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(fit_circle(&line), Err(Error::DegenerateFit)));
    }

    #[test]
    fn line_circle_hand_solved() {
        let d = c(1.0, 0.0);
        let (a, b) = line_circle_intersect(d, &Circle::new(c(0.5, 0.0), 0.1)).unwrap();
        assert!((a - 0.4).abs() < 1e-10 && (b - 0.6).abs() < 1e-10);
        assert!(line_circle_intersect(d, &Circle::new(c(0.5, 0.2), 0.1)).is_none());
        let (a, b) = line_circle_intersect(d, &Circle::new(c(0.5, 0.06), 0.1)).unwrap();
        assert!((a - 0.42).abs() < 1e-10 && (b - 0.58).abs() < 1e-10);
        // circle entirely beyond the unit ray
        assert!(line_circle_intersect(d, &Circle::new(c(1.5, 0.0), 0.1)).is_none());
        // clipping at the far end
        let (_, b) = line_circle_intersect(d, &Circle::new(c(0.95, 0.0), 0.1)).unwrap();
        assert_eq!(b, 1.0);
    }

    #[test]
    fn arc_examples() {
        let unit = Circle::new(c(0.0, 0.0), 1.0);
        let pts = arc_polyline(&unit, 0.0, PI / 2.0, 2);
        assert!((pts[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((pts[1] - c(0.0, 1.0)).norm() < 1e-15);
        let same = arc_polyline(&unit, 0.7, 0.7, 4);
        assert!(same.iter().all(|p| (p - same[0]).norm() < 1e-15));
        let half = arc_polyline(&unit, 0.0, PI, 3);
        assert!((half[1] - c(0.0, 1.0)).norm() < 1e-12);
        // shorter sweep goes clockwise here
        let cw = arc_polyline(&unit, 0.0, 3.0 * PI / 2.0, 3);
        assert!(cw[1].im < 0.0);
    }

    #[test]
    fn arc_chords_grow_from_start() {
        let unit = Circle::new(c(0.2, -0.1), 0.7);
        let pts = arc_polyline(&unit, 0.0, PI, 9);
        let chords: Vec<f64> = pts.iter().map(|p| (p - pts[0]).norm()).collect();
        assert!(chords.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let pos = vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0), c(1.0, 1.0)];
        let faces = vec![[0, 1, 2], [1, 3, 2]];
        let (f, l) = point_locate(&pos, &faces, c(1.0, 1.0)).unwrap();
        assert_eq!(f, 1);
        assert!((l[1] - 1.0).abs() < 1e-12);
        let cen = (pos[1] + pos[3] + pos[2]) / 3.0;
        let (f, l) = point_locate(&pos, &faces, cen).unwrap();
        assert_eq!(f, 1);
        assert!(l.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        assert!(matches!(point_locate(&pos, &faces, c(2.0, 2.0)), Err(Error::OutOfDomain)));
        let grid = PlanarLocator::with_grid(pos.clone(), faces.clone());
        assert_eq!(grid.locate(cen).unwrap().0, 1);
        let (f, l) = grid.locate_or_nearest(c(1.05, 0.5), 0.1).unwrap();
        assert_eq!(f, 1);
        assert!(l.iter().all(|&x| x >= 0.0));
    }
}
