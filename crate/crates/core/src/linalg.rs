//! Sparse symmetric systems: cotangent Laplacian assembly, Dirichlet solves
//! and a Jacobi-preconditioned conjugate gradient.

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::geometry::Complex2;
use crate::mesh::{Topology, Vec3, NONE};

pub const CG_TOL: f64 = 1e-13;

/// `y = A x`.
pub fn spmv(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let (off, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    for r in 0..a.nrows() {
        let mut s = 0.0;
        for k in off[r]..off[r + 1] {
            s += vals[k] * x[cols[k]];
        }
        y[r] = s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`. Stops when the
/// residual falls below `tol · ‖b‖`.
pub fn pcg(a: &CsrMatrix<f64>, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let mut diag = vec![0.0; n];
    for (r, d) in diag.iter_mut().enumerate() {
        let row = a.row(r);
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if c == r {
                *d = v;
            }
        }
        if !(*d > 0.0) {
            return Err(Error::SolverFailure(format!("non-positive diagonal in row {r}")));
        }
    }
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = vec![0.0; n];
    spmv(a, &x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(x);
        }
        spmv(a, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= 1e3 * tol * bnorm {
        return Ok(x);
    }
    Err(Error::SolverFailure("conjugate gradient did not converge".into()))
}

/// Cotangent of the angle at `o` in triangle `(o, a, b)`.
fn cot_at(o: Vec3, a: Vec3, b: Vec3) -> f64 {
    let u = a - o;
    let v = b - o;
    let c = u.cross(&v).norm();
    if c <= 1e-300 {
        return 0.0;
    }
    u.dot(&v) / c
}

/// Per-edge weights `(cot α + cot β)/2`, clamped below at zero when asked.
pub fn cotan_weights(pos: &[Vec3], faces: &[[usize; 3]], topo: &Topology, clamp: bool) -> Vec<f64> {
    let mut w = vec![0.0; topo.edges.len()];
    for (fi, f) in faces.iter().enumerate() {
        for j in 0..3 {
            let e = topo.face_edges[fi][j];
            let o = f[(j + 2) % 3];
            w[e] += 0.5 * cot_at(pos[o], pos[f[j]], pos[f[(j + 1) % 3]]);
        }
    }
    if clamp {
        for x in &mut w {
            *x = x.max(0.0);
        }
    }
    w
}

/// Sum of interior-edge weights that went negative before clamping.
pub fn negative_weight_count(pos: &[Vec3], faces: &[[usize; 3]], topo: &Topology) -> usize {
    cotan_weights(pos, faces, topo, false)
        .iter()
        .enumerate()
        .filter(|(e, &w)| w < 0.0 && topo.edge_faces[*e].iter().all(|&f| f != NONE))
        .count()
}

/// Laplacian restricted to free vertices with Dirichlet data elsewhere.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    n: usize,
    free_index: Vec<usize>,
    free: Vec<usize>,
    matrix: Option<CsrMatrix<f64>>,
    /// `(free row, fixed vertex, weight)` couplings moved to the right-hand side.
    couplings: Vec<(usize, usize, f64)>,
}

impl DirichletSolver {
    pub fn new(n: usize, edges: &[[usize; 2]], weights: &[f64], fixed: &[bool]) -> Result<DirichletSolver> {
        let mut free_index = vec![NONE; n];
        let mut free = Vec::new();
        for v in 0..n {
            if !fixed[v] {
                free_index[v] = free.len();
                free.push(v);
            }
        }
        let m = free.len();
        let mut coo = CooMatrix::new(m, m);
        let mut diag = vec![0.0; m];
        let mut couplings = Vec::new();
        for (e, &[a, b]) in edges.iter().enumerate() {
            let w = weights[e];
            if w == 0.0 {
                continue;
            }
            let (fa, fb) = (free_index[a], free_index[b]);
            if fa != NONE {
                diag[fa] += w;
            }
            if fb != NONE {
                diag[fb] += w;
            }
            match (fa != NONE, fb != NONE) {
                (true, true) => {
                    coo.push(fa, fb, -w);
                    coo.push(fb, fa, -w);
                }
                (true, false) => couplings.push((fa, b, w)),
                (false, true) => couplings.push((fb, a, w)),
                _ => {}
            }
        }
        for (i, d) in diag.iter().enumerate() {
            if !(*d > 0.0) {
                return Err(Error::SolverFailure(format!("vertex {} has no positive coupling", free[i])));
            }
            coo.push(i, i, *d);
        }
        let matrix = if m > 0 { Some(CsrMatrix::from(&coo)) } else { None };
        Ok(DirichletSolver {
            n,
            free_index,
            free,
            matrix,
            couplings,
        })
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn is_free(&self, v: usize) -> bool {
        self.free_index[v] != NONE
    }

    /// Solves with the values of fixed vertices taken from `values`; free
    /// entries of `values` serve as the initial guess.
    pub fn solve(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = values.to_vec();
        let Some(a) = &self.matrix else {
            return Ok(out);
        };
        let mut rhs = vec![0.0; self.free.len()];
        for &(i, v, w) in &self.couplings {
            rhs[i] += w * values[v];
        }
        let x0: Vec<f64> = self.free.iter().map(|&v| values[v]).collect();
        let x = pcg(a, &rhs, Some(&x0), CG_TOL, 20 * self.free.len() + 100)?;
        for (i, &v) in self.free.iter().enumerate() {
            out[v] = x[i];
        }
        Ok(out)
    }

    pub fn solve_complex(&self, values: &[Complex2]) -> Result<Vec<Complex2>> {
        let re: Vec<f64> = values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = values.iter().map(|z| z.im).collect();
        let re = self.solve(&re)?;
        let im = self.solve(&im)?;
        Ok(re.into_iter().zip(im).map(|(a, b)| Complex2::new(a, b)).collect())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// `(L x)_v = Σ_u w_uv (x_v − x_u)` on every vertex.
pub fn apply_laplacian(n: usize, edges: &[[usize; 2]], weights: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for (e, &[a, b]) in edges.iter().enumerate() {
        let d = weights[e] * (x[a] - x[b]);
        y[a] += d;
        y[b] -= d;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;

    #[test]
    fn pcg_small_spd() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, 4.0);
        coo.push(0, 1, 1.0);
        coo.push(1, 0, 1.0);
        coo.push(1, 1, 3.0);
        let a = CsrMatrix::from(&coo);
        let x = pcg(&a, &[1.0, 2.0], None, 1e-14, 50).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn cotan_weights_reproduce_linear_functions() {
        let m = gen::flat_disk(1.0, 0.15).unwrap();
        let t = m.topology();
        let w = cotan_weights(m.vertices(), m.faces(), t, false);
        let x: Vec<f64> = m.vertices().iter().map(|p| 0.3 * p.x - 1.2 * p.y + 0.5).collect();
        let lx = apply_laplacian(m.n_vertices(), &t.edges, &w, &x);
        for v in 0..m.n_vertices() {
            if !m.is_boundary_vertex(v) {
                assert!(lx[v].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_constant_and_linear() {
        let m = gen::flat_disk(1.0, 0.15).unwrap();
        let t = m.topology();
        let w = cotan_weights(m.vertices(), m.faces(), t, true);
        let fixed: Vec<bool> = (0..m.n_vertices()).map(|v| m.is_boundary_vertex(v)).collect();
        let s = DirichletSolver::new(m.n_vertices(), &t.edges, &w, &fixed).unwrap();
        let vals: Vec<f64> = (0..m.n_vertices()).map(|v| if fixed[v] { 2.5 } else { 0.0 }).collect();
        assert!(s.solve(&vals).unwrap().iter().all(|x| (x - 2.5).abs() < 1e-10));
        let lin: Vec<f64> = m.vertices().iter().map(|p| p.x + 2.0 * p.y).collect();
        let init: Vec<f64> = (0..m.n_vertices()).map(|v| if fixed[v] { lin[v] } else { 0.0 }).collect();
        let sol = s.solve(&init).unwrap();
        for v in 0..m.n_vertices() {
            assert!((sol[v] - lin[v]).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_free_vertex_fails() {
        let s = DirichletSolver::new(3, &[[0, 1]], &[1.0], &[true, false, false]);
        assert!(matches!(s, Err(Error::SolverFailure(_))));
    }
}
