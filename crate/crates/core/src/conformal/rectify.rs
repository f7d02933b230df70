//! Boundary rectification, Möbius inflation and harmonic extension.

use std::f64::consts::TAU;

use super::signed_area2;
use crate::error::{Error, Result};
use crate::geometry::{fit_circle, mobius_apply, Circle, Complex2, MobiusParams};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::linalg::{cotan_weights, pcg, DirichletSolver};
use crate::mesh::{face_frame, LoopLabel, TriMesh};

/// Boundary values on round circles, normalised so the outer loop lies on
/// the unit circle.
#[derive(Debug, Clone)]
pub struct Rectified {
    /// `Some` on boundary vertices.
    pub values: Vec<Option<Complex2>>,
    /// Obstacle circles in label order.
    pub circles: Vec<Circle>,
    /// Circle fitted to the outer loop before normalisation.
    pub outer_fit: Circle,
}

fn project(c: &Circle, z: Complex2, v: usize) -> Result<Complex2> {
    let d = z - c.center;
    if d.norm() <= 1e-12 * c.radius.max(1e-300) {
        return Err(Error::ProjectionSingularity { vertex: v });
    }
    Ok(c.center + d * (c.radius / d.norm()))
}

/// Fits a circle to each boundary loop's image and projects the loop onto
/// it radially, then maps the outer circle to the unit circle.
pub fn rectify_boundaries(mesh: &TriMesh, image: &[Complex2]) -> Result<Rectified> {
    let mut values = vec![None; mesh.n_vertices()];
    let mut circles = vec![Circle::new(Complex2::new(0.0, 0.0), 0.0); mesh.obstacle_count()];
    let mut outer_fit = Circle::new(Complex2::new(0.0, 0.0), 1.0);
    for lp in mesh.loops() {
        let pts: Vec<Complex2> = lp.vertices.iter().map(|&v| image[v]).collect();
        let c = fit_circle(&pts)?;
        for &v in &lp.vertices {
            values[v] = Some(project(&c, image[v], v)?);
        }
        match lp.label {
            LoopLabel::Outer => outer_fit = c,
            LoopLabel::Obstacle(k) => circles[k] = c,
        }
    }
    let norm = |z: Complex2| (z - outer_fit.center) / outer_fit.radius;
    for v in values.iter_mut().flatten() {
        *v = norm(*v);
    }
    for c in &mut circles {
        *c = Circle::new(norm(c.center), c.radius / outer_fit.radius);
    }
    Ok(Rectified {
        values,
        circles,
        outer_fit,
    })
}

/// Area-weighted variance of the per-face area ratio after `z ↦ M_ς(z)`.
pub fn inflation_objective(mesh: &TriMesh, image: &[Complex2], s: Complex2) -> f64 {
    let m = MobiusParams { phi: 0.0, a: s };
    let moved: Vec<Complex2> = image
        .iter()
        .map(|&z| mobius_apply(z, &m).unwrap_or(Complex2::new(f64::NAN, f64::NAN)))
        .collect();
    let mut total = 0.0;
    let mut ratios = Vec::with_capacity(mesh.n_faces());
    for (fi, f) in mesh.faces().iter().enumerate() {
        let a = mesh.face_area(fi);
        let d = 0.5 * signed_area2(moved[f[0]], moved[f[1]], moved[f[2]]).abs() / a;
        ratios.push((a, d));
        total += a;
    }
    let mean = ratios.iter().map(|(a, d)| a * d).sum::<f64>() / total;
    let var = ratios.iter().map(|(a, d)| a * (d - mean) * (d - mean)).sum::<f64>();
    if var.is_finite() {
        var
    } else {
        f64::INFINITY
    }
}

/// Coarse 17×17 polar grid over `|ς| ≤ 0.9`, then coordinate descent with
/// step halving down to 1e-4. Candidates within 1.1 radii of an obstacle
/// centre in `keep_out` are skipped, so the new origin stays clear of every
/// obstacle.
pub fn optimize_mobius_inflation(mesh: &TriMesh, image: &[Complex2], keep_out: &[Circle]) -> MobiusParams {
    let feasible = |s: Complex2| s.norm() <= 0.9 + 1e-12 && keep_out.iter().all(|c| (s - c.center).norm() > 1.1 * c.radius);
    let obj = |s: Complex2| inflation_objective(mesh, image, s);
    let zero = Complex2::new(0.0, 0.0);
    let mut best = (zero, if feasible(zero) { obj(zero) } else { f64::INFINITY });
    for i in 1..17 {
        let r = 0.9 * i as f64 / 16.0;
        for j in 0..17 {
            let s = Complex2::from_polar(r, TAU * j as f64 / 17.0);
            if feasible(s) {
                let e = obj(s);
                if e < best.1 {
                    best = (s, e);
                }
            }
        }
    }
    if !best.1.is_finite() {
        return MobiusParams::identity();
    }
    let mut step = 0.9 / 16.0;
    while step >= 1e-4 {
        let mut moved = false;
        for d in [Complex2::new(step, 0.0), Complex2::new(-step, 0.0), Complex2::new(0.0, step), Complex2::new(0.0, -step)] {
            let s = best.0 + d;
            if feasible(s) {
                let e = obj(s);
                if e < best.1 {
                    best = (s, e);
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    MobiusParams { phi: 0.0, a: best.0 }
}

/// Clamped-cotangent harmonic extension of boundary data.
pub fn solve_harmonic_extension(mesh: &TriMesh, boundary: &[Option<Complex2>]) -> Result<Vec<Complex2>> {
    let n = mesh.n_vertices();
    let mut fixed = vec![false; n];
    let mut values = vec![Complex2::new(0.0, 0.0); n];
    for v in 0..n {
        if mesh.is_boundary_vertex(v) {
            let Some(z) = boundary[v] else {
                return Err(Error::InvalidMesh(format!("no boundary value for vertex {v}")));
            };
            fixed[v] = true;
            values[v] = z;
        }
    }
    let w = cotan_weights(mesh.vertices(), mesh.faces(), mesh.topology(), true);
    DirichletSolver::new(n, &mesh.topology().edges, &w, &fixed)?.solve_complex(&values)
}

/// Outcome of [`refine_circle_domain`].
#[derive(Debug, Clone)]
pub struct Refined {
    pub values: Vec<Option<Complex2>>,
    pub circles: Vec<Circle>,
    pub energy_before: f64,
    pub energy_after: f64,
    pub iterations: usize,
}

/// Per-face `√A·∂z̄ B_j` for the three corners, in each face's own frame.
fn conformal_stencil(mesh: &TriMesh) -> Result<Vec<[Complex2; 3]>> {
    let p = mesh.vertices();
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let q = face_frame(p[f[0]], p[f[1]], p[f[2]]).ok_or(Error::DegenerateFace { face: fi })?;
            let area2 = (q[1] - q[0]).perp(&(q[2] - q[0]));
            let s = (0.5 * area2).sqrt();
            let mut b = [Complex2::new(0.0, 0.0); 3];
            for j in 0..3 {
                let d = q[(j + 2) % 3] - q[(j + 1) % 3];
                // ∇B_j = rot90(d)/(2A); ∂z̄ = (∂x + i∂y)/2
                b[j] = Complex2::new(-d.y, d.x) * (0.5 * s / area2);
            }
            Ok(b)
        })
        .collect()
}

/// `Σ_f A_f |f_z̄|²`, zero exactly for conformal maps.
pub fn conformal_energy(mesh: &TriMesh, image: &[Complex2]) -> Result<f64> {
    let st = conformal_stencil(mesh)?;
    Ok(face_energy(mesh, &st, image))
}

fn face_energy(mesh: &TriMesh, st: &[[Complex2; 3]], z: &[Complex2]) -> f64 {
    mesh.faces()
        .iter()
        .zip(st)
        .map(|(f, b)| (b[0] * z[f[0]] + b[1] * z[f[1]] + b[2] * z[f[2]]).norm_sqr())
        .sum()
}

fn circles_valid(c: &[Circle]) -> bool {
    c.iter().all(|a| a.radius > 0.0 && a.center.norm() + a.radius < 1.0)
        && (0..c.len()).all(|i| (i + 1..c.len()).all(|j| (c[i].center - c[j].center).norm() > c[i].radius + c[j].radius))
}

/// Damped Gauss–Newton on the conformal energy over circle-domain
/// configurations: the outer loop stays on the unit circle, every obstacle
/// loop on a circle whose centre and radius move freely (obstacle 0's centre
/// and one outer vertex are pinned to fix the Möbius gauge), and boundary
/// vertices slide along their circles. Returns refined boundary values.
pub fn refine_circle_domain(
    mesh: &TriMesh,
    values: &[Option<Complex2>],
    circles: &[Circle],
    max_iter: usize,
) -> Result<Refined> {
    let n = mesh.n_vertices();
    let st = conformal_stencil(mesh)?;
    let mut circles = circles.to_vec();
    let mut z = solve_harmonic_extension(mesh, values)?;
    let mut owner = vec![usize::MAX; n];
    for lp in mesh.loops() {
        let k = match lp.label {
            LoopLabel::Outer => usize::MAX - 1,
            LoopLabel::Obstacle(k) => k,
        };
        for &v in &lp.vertices {
            owner[v] = k;
        }
    }
    let pinned = mesh.outer_loop().vertices[0];
    let mut energy = face_energy(mesh, &st, &z);
    let energy_before = energy;
    let mut damping = 1e-4;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // unknown layout: interior (x, y) pairs, then per obstacle (cx, cy, r),
        // then one tangential slide per boundary vertex
        let mut index = vec![usize::MAX; n];
        let mut m = 0;
        for v in 0..n {
            if owner[v] == usize::MAX {
                index[v] = m;
                m += 2;
            }
        }
        let circ0 = m;
        m += 3 * circles.len();
        for v in 0..n {
            if owner[v] != usize::MAX && v != pinned {
                index[v] = m;
                m += 1;
            }
        }
        let mut current = vec![0.0; m];
        for v in 0..n {
            if owner[v] == usize::MAX {
                current[index[v]] = z[v].re;
                current[index[v] + 1] = z[v].im;
            }
        }
        for (k, c) in circles.iter().enumerate() {
            current[circ0 + 3 * k] = c.center.re;
            current[circ0 + 3 * k + 1] = c.center.im;
            current[circ0 + 3 * k + 2] = c.radius;
        }
        let one = Complex2::new(1.0, 0.0);
        let i = Complex2::new(0.0, 1.0);
        // z_v = constant + Σ coef · unknown
        let rep = |v: usize| -> (Complex2, Vec<(usize, Complex2)>) {
            match owner[v] {
                usize::MAX => (Complex2::new(0.0, 0.0), vec![(index[v], one), (index[v] + 1, i)]),
                k if k == usize::MAX - 1 => {
                    let nv = z[v] / z[v].norm();
                    let t = if v == pinned { vec![] } else { vec![(index[v], i * nv)] };
                    (nv, t)
                }
                k => {
                    let c = circles[k];
                    let nv = (z[v] - c.center) / (z[v] - c.center).norm();
                    let mut t = vec![(circ0 + 3 * k + 2, nv), (index[v], i * nv)];
                    if k == 0 {
                        return (c.center, t);
                    }
                    t.push((circ0 + 3 * k, one));
                    t.push((circ0 + 3 * k + 1, i));
                    (Complex2::new(0.0, 0.0), t)
                }
            }
        };
        let reps: Vec<(Complex2, Vec<(usize, Complex2)>)> = (0..n).map(rep).collect();
        let mut coo = CooMatrix::new(m, m);
        let mut rhs = vec![0.0; m];
        let mut diag = vec![0.0; m];
        for (f, b) in mesh.faces().iter().zip(&st) {
            let mut d = Complex2::new(0.0, 0.0);
            let mut terms: Vec<(usize, Complex2)> = Vec::with_capacity(12);
            for j in 0..3 {
                let (c0, t) = &reps[f[j]];
                d += b[j] * c0;
                terms.extend(t.iter().map(|&(u, c)| (u, b[j] * c)));
            }
            for &(u, cu) in &terms {
                rhs[u] -= (cu.conj() * d).re;
                for &(w, cw) in &terms {
                    let a = (cu.conj() * cw).re;
                    coo.push(u, w, a);
                    if u == w {
                        diag[u] += a;
                    }
                }
            }
        }
        let scale = diag.iter().sum::<f64>() / m as f64;
        let mut accepted = false;
        while damping < 1e6 {
            let mut sys = coo.clone();
            let mut r = rhs.clone();
            for u in 0..m {
                let lam = damping * scale;
                sys.push(u, u, lam);
                r[u] += lam * current[u];
            }
            let a = CsrMatrix::from(&sys);
            let Ok(x) = pcg(&a, &r, Some(&current), 1e-10, 20 * m + 200) else {
                damping *= 10.0;
                continue;
            };
            let mut nc = circles.clone();
            for (k, c) in nc.iter_mut().enumerate() {
                let center = if k == 0 { c.center } else { Complex2::new(x[circ0 + 3 * k], x[circ0 + 3 * k + 1]) };
                *c = Circle::new(center, x[circ0 + 3 * k + 2]);
            }
            if !circles_valid(&nc) {
                damping *= 10.0;
                continue;
            }
            let mut nz = z.clone();
            for v in 0..n {
                let (c0, t) = &reps[v];
                let mut w = *c0;
                for &(u, c) in t {
                    w += c * x[u];
                }
                nz[v] = match owner[v] {
                    usize::MAX => w,
                    k if k == usize::MAX - 1 => w / w.norm(),
                    k => {
                        let d = w - nc[k].center;
                        nc[k].center + d * (nc[k].radius / d.norm())
                    }
                };
            }
            let ne = face_energy(mesh, &st, &nz);
            if ne < energy {
                let gain = (energy - ne) / energy.max(1e-300);
                z = nz;
                circles = nc;
                energy = ne;
                damping = (damping / 3.0).max(1e-8);
                accepted = gain > 1e-7;
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let values = (0..n).map(|v| (owner[v] != usize::MAX).then_some(z[v])).collect();
    Ok(Refined {
        values,
        circles,
        energy_before,
        energy_after: energy,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::apply_laplacian;
    use crate::mesh::gen;

    fn xy(m: &TriMesh) -> Vec<Complex2> {
        m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect()
    }

    #[test]
    fn noisy_circle_is_projected_exactly() {
        let m = gen::flat_annulus(0.3, 1.0, 4, 40, false);
        let mut img = xy(&m);
        for (i, z) in img.iter_mut().enumerate() {
            if m.is_boundary_vertex(i) {
                *z *= 1.0 + 1e-3 * ((i * 7919 % 13) as f64 / 6.0 - 1.0);
            }
        }
        let r = rectify_boundaries(&m, &img).unwrap();
        let c = r.circles[0];
        for &v in &m.obstacle_loop(0).vertices {
            let d = (r.values[v].unwrap() - c.center).norm();
            assert!((d - c.radius).abs() < 1e-12);
        }
        for &v in &m.outer_loop().vertices {
            assert!((r.values[v].unwrap().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_circles_are_untouched() {
        let m = gen::flat_annulus(0.3, 1.0, 4, 40, false);
        let img = xy(&m);
        let r = rectify_boundaries(&m, &img).unwrap();
        for v in 0..m.n_vertices() {
            if let Some(z) = r.values[v] {
                assert!((z - img[v]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_at_centre_is_singular() {
        let m = gen::flat_annulus(0.3, 1.0, 4, 40, false);
        let mut img = xy(&m);
        // two antipodal loop vertices moved onto the centre keep the fit symmetric
        let lp = &m.obstacle_loop(0).vertices;
        img[lp[0]] = Complex2::new(0.0, 0.0);
        img[lp[20]] = Complex2::new(0.0, 0.0);
        assert!(matches!(rectify_boundaries(&m, &img), Err(Error::ProjectionSingularity { .. })));
    }

    #[test]
    fn inflation_recovers_known_compression() {
        let m = gen::flat_disk(1.0, 0.08).unwrap();
        let a0 = Complex2::new(0.35, -0.2);
        let inv = MobiusParams { phi: 0.0, a: -a0 };
        let img: Vec<Complex2> = xy(&m).iter().map(|&z| mobius_apply(z, &inv).unwrap()).collect();
        let s = optimize_mobius_inflation(&m, &img, &[]);
        assert!((s.a - a0).norm() < 0.05, "{:?}", s.a);
        assert!(inflation_objective(&m, &img, s.a) <= inflation_objective(&m, &img, Complex2::new(0.0, 0.0)));
        let flat = optimize_mobius_inflation(&m, &xy(&m), &[]);
        assert!(flat.a.norm() <= 0.9 / 16.0);
    }

    #[test]
    fn harmonic_extension_of_affine_and_constant_data() {
        let m = gen::flat_disk(1.0, 0.12).unwrap();
        let a = Complex2::new(0.7, 0.4);
        let b = Complex2::new(-0.1, 0.3);
        let affine = |z: Complex2| a * z + 0.2 * z.conj() + b;
        let bd: Vec<Option<Complex2>> = (0..m.n_vertices())
            .map(|v| m.is_boundary_vertex(v).then(|| affine(xy(&m)[v])))
            .collect();
        let out = solve_harmonic_extension(&m, &bd).unwrap();
        for (v, z) in xy(&m).into_iter().enumerate() {
            assert!((out[v] - affine(z)).norm() < 1e-8);
        }
        let w = cotan_weights(m.vertices(), m.faces(), m.topology(), true);
        let re: Vec<f64> = out.iter().map(|z| z.re).collect();
        let lap = apply_laplacian(m.n_vertices(), &m.topology().edges, &w, &re);
        let scale = re.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for v in 0..m.n_vertices() {
            if !m.is_boundary_vertex(v) {
                assert!(lap[v].abs() < 1e-10 * scale.max(1.0));
            }
        }
        let constant: Vec<Option<Complex2>> = bd.iter().map(|o| o.map(|_| b)).collect();
        assert!(solve_harmonic_extension(&m, &constant).unwrap().iter().all(|z| (z - b).norm() < 1e-10));
    }
}
