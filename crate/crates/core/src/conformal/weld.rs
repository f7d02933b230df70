//! Möbius welding of disk patches and similarity welding of annuli.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{interface_weights, AnnulusMap, PatchMap, VertexImage};
use crate::decomposition::Subdomain;
use crate::error::{Error, Result};
use crate::geometry::{mobius_apply, Complex2, MobiusMatrix, MobiusParams, SimilarityParams};
use crate::mesh::{Patch, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeldResult {
    pub params: MobiusParams,
    /// Weighted squared misfit.
    pub energy: f64,
    /// `sqrt(energy / Σ ds)`, an RMS point distance.
    pub residual: f64,
}

fn weld_energy(z: &[Complex2], w: &[Complex2], ds: &[f64], m: &MobiusParams) -> f64 {
    let mut e = 0.0;
    for i in 0..z.len() {
        match mobius_apply(w[i], m) {
            Ok(t) => e += ds[i] * (z[i] - t).norm_sqr(),
            Err(_) => return f64::INFINITY,
        }
    }
    e
}

/// Minimum-|a| automorphism sending `w` to `z`.
fn single_point(z: Complex2, w: Complex2) -> MobiusParams {
    let (rz, rw) = (z.norm(), w.norm());
    if rw < 1e-15 {
        return MobiusParams { phi: 0.0, a: -z };
    }
    let den = 1.0 - rz * rw;
    let t = if (rw - rz).abs() < 1e-14 || den.abs() < 1e-14 {
        0.0
    } else {
        (rw - rz) / den
    };
    let a = w / rw * t;
    let moved = (w - a) / (Complex2::new(1.0, 0.0) - a.conj() * w);
    let phi = if rz < 1e-15 || moved.norm() < 1e-15 {
        0.0
    } else {
        (z.arg() - moved.arg()).rem_euclid(TAU)
    };
    MobiusParams { phi, a }
}

/// Finds the automorphism `Θ` minimising `Σ ds |z − Θ(w)|²` by
/// Levenberg–Marquardt on `(φ, Re a, Im a)` from eight rotations.
pub fn fit_mobius(z: &[Complex2], w: &[Complex2], ds: &[f64]) -> (MobiusParams, f64) {
    if z.len() == 1 {
        let m = single_point(z[0], w[0]);
        return (m, weld_energy(z, w, ds, &m));
    }
    let mut best = (MobiusParams::identity(), weld_energy(z, w, ds, &MobiusParams::identity()));
    for j in 0..8 {
        let start = MobiusParams {
            phi: TAU * j as f64 / 8.0,
            a: Complex2::new(0.0, 0.0),
        };
        let (m, e) = levenberg_marquardt(z, w, ds, start);
        if e < best.1 {
            best = (m, e);
        }
    }
    best
}

fn levenberg_marquardt(z: &[Complex2], w: &[Complex2], ds: &[f64], start: MobiusParams) -> (MobiusParams, f64) {
    let one = Complex2::new(1.0, 0.0);
    let i = Complex2::new(0.0, 1.0);
    let mut m = start;
    let mut e = weld_energy(z, w, ds, &m);
    let mut lambda = 1e-3;
    for _ in 0..300 {
        let rot = Complex2::from_polar(1.0, m.phi);
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for p in 0..z.len() {
            let num = w[p] - m.a;
            let den = one - m.a.conj() * w[p];
            let t = rot * num / den;
            let r = t - z[p];
            let d2 = den * den;
            let cols = [i * t, rot * (num * w[p] - den) / d2, -i * rot * (den + num * w[p]) / d2];
            for a in 0..3 {
                jtr[a] += ds[p] * (cols[a].re * r.re + cols[a].im * r.im);
                for b in 0..3 {
                    jtj[(a, b)] += ds[p] * (cols[a].re * cols[b].re + cols[a].im * cols[b].im);
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut h = jtj;
            for a in 0..3 {
                h[(a, a)] += lambda * (jtj[(a, a)] + 1e-12);
            }
            let Some(step) = h.lu().solve(&(-jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let cand = MobiusParams {
                phi: m.phi + step[0],
                a: m.a + Complex2::new(step[1], step[2]),
            };
            if cand.a.norm() < 1.0 {
                let ce = weld_energy(z, w, ds, &cand);
                if ce < e {
                    let small = step.norm() < 1e-15 || e - ce <= 1e-16 * e;
                    m = cand;
                    e = ce;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = !small;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    m.phi = m.phi.rem_euclid(TAU);
    (m, e)
}

/// Welds `hv` onto `hu` across the shared edges. Errors with `WeldMisfit`
/// when the RMS misfit exceeds `tol`.
pub fn local_weld(mesh: &TriMesh, hu: &PatchMap, hv: &PatchMap, interface: &[usize], tol: f64) -> Result<WeldResult> {
    weld_with(mesh, hu, hv, interface, tol, false)
}

fn weld_with(mesh: &TriMesh, hu: &PatchMap, hv: &PatchMap, interface: &[usize], tol: f64, invert: bool) -> Result<WeldResult> {
    if interface.is_empty() {
        return Err(Error::InadmissiblePartition("empty weld interface".into()));
    }
    let pts = interface_weights(mesh, interface);
    let mut z = Vec::with_capacity(pts.len());
    let mut w = Vec::with_capacity(pts.len());
    let mut ds = Vec::with_capacity(pts.len());
    for &(v, d) in &pts {
        let (Some(a), Some(b)) = (hu.image_of(v), hv.image_of(v)) else {
            return Err(Error::InadmissiblePartition(format!("interface vertex {v} missing from a patch")));
        };
        z.push(a);
        w.push(if invert { b.inv() } else { b });
        ds.push(d);
    }
    let (params, energy) = fit_mobius(&z, &w, &ds);
    let total: f64 = ds.iter().sum();
    let residual = (energy / total).sqrt();
    if !(residual <= tol) {
        return Err(Error::WeldMisfit { residual });
    }
    Ok(WeldResult { params, energy, residual })
}

/// Orders the cells serving one obstacle into a closed chain by adjacency.
pub fn order_chain(cells: &[&Subdomain]) -> Result<Vec<usize>> {
    let l = cells.len();
    if l <= 2 {
        return Ok((0..l).collect());
    }
    let ids: BTreeMap<usize, usize> = cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let mut order = vec![0];
    let mut used = vec![false; l];
    used[0] = true;
    while order.len() < l {
        let cur = cells[*order.last().unwrap()];
        let next = cur.interfaces.keys().filter_map(|n| ids.get(n)).copied().find(|&j| !used[j]);
        match next {
            Some(j) => {
                used[j] = true;
                order.push(j);
            }
            None => return Err(Error::ChainMisclosure { mismatch: f64::INFINITY }),
        }
    }
    if !cells[*order.last().unwrap()].interfaces.contains_key(&cells[0].id) {
        return Err(Error::ChainMisclosure { mismatch: f64::INFINITY });
    }
    Ok(order)
}

/// Image of the cells ringing one obstacle in the frame of the first cell.
#[derive(Debug, Clone)]
pub struct ChainImage {
    pub vertices: VertexImage,
    /// Frame map of each patch into the first patch's disk.
    pub frames: Vec<MobiusMatrix>,
    pub welds: Vec<WeldResult>,
    /// Largest image gap on each welded interface, in units of the disk diameter.
    pub seam_gaps: Vec<f64>,
    /// Largest gap on the interface closing the chain, same units.
    pub closure: f64,
    pub euler_characteristic: i64,
}

/// Welds consecutive chain patches. The neighbour's disk is inverted through
/// the unit circle first, so its interface arc runs the same way as ours.
pub fn weld_chain(mesh: &TriMesh, cells: &[&Subdomain], patches: &[PatchMap], tol: f64) -> Result<Vec<WeldResult>> {
    (1..patches.len())
        .map(|l| {
            let iface = &cells[l - 1].interfaces[&cells[l].id];
            weld_with(mesh, &patches[l - 1], &patches[l], iface, tol, true)
        })
        .collect()
}

/// Chains the welds into frames, averages seam vertices and checks that the
/// chain closes within `closure_tol` and forms an annulus.
pub fn compose_unified(
    mesh: &TriMesh,
    cells: &[&Subdomain],
    patches: &[PatchMap],
    welds: &[WeldResult],
    closure_tol: f64,
) -> Result<ChainImage> {
    let l = patches.len();
    let mut faces: Vec<usize> = cells.iter().flat_map(|c| c.faces.iter().copied()).collect();
    faces.sort_unstable();
    let chi = Patch::from_faces(mesh, &faces)?.euler_characteristic();
    if l == 1 {
        return Ok(ChainImage {
            vertices: patches[0].vertices.clone(),
            frames: vec![MobiusMatrix::identity()],
            welds: Vec::new(),
            seam_gaps: Vec::new(),
            closure: 0.0,
            euler_characteristic: chi,
        });
    }
    let mut frames = vec![MobiusMatrix::identity()];
    for wr in welds {
        let step = wr.params.to_matrix().compose(&MobiusMatrix::inversion());
        let f = frames.last().unwrap().compose(&step);
        frames.push(f);
    }
    let mut sum: BTreeMap<usize, (Complex2, usize)> = BTreeMap::new();
    let mut mapped: Vec<BTreeMap<usize, Complex2>> = Vec::with_capacity(l);
    for (k, p) in patches.iter().enumerate() {
        let mut m = BTreeMap::new();
        for (i, &g) in p.vertices.global.iter().enumerate() {
            let z = frames[k].apply(p.vertices.image[i])?;
            m.insert(g, z);
            let e = sum.entry(g).or_insert((Complex2::new(0.0, 0.0), 0));
            e.0 += z;
            e.1 += 1;
        }
        mapped.push(m);
    }
    let gap = |a: usize, b: usize| -> f64 {
        let iface = &cells[a].interfaces[&cells[b].id];
        let verts: BTreeSet<usize> = iface.iter().flat_map(|&e| mesh.topology().edges[e]).collect();
        verts
            .iter()
            .map(|v| (mapped[a][v] - mapped[b][v]).norm() / 2.0)
            .fold(0.0, f64::max)
    };
    let seam_gaps: Vec<f64> = (1..l).map(|k| gap(k - 1, k)).collect();
    let closure = gap(l - 1, 0);
    if !(closure <= closure_tol) {
        return Err(Error::ChainMisclosure { mismatch: closure });
    }
    if chi != 0 {
        return Err(Error::InadmissiblePartition(format!("welded chain has Euler characteristic {chi}")));
    }
    let (global, image): (Vec<usize>, Vec<Complex2>) = sum.into_iter().map(|(g, (s, c))| (g, s / c as f64)).unzip();
    Ok(ChainImage {
        vertices: VertexImage::new(global, image),
        frames,
        welds: welds.to_vec(),
        seam_gaps,
        closure,
        euler_characteristic: chi,
    })
}

/// Similarities placing each annulus in the frame of the first.
#[derive(Debug, Clone)]
pub struct GlobalWeld {
    pub transforms: Vec<SimilarityParams>,
    /// Stitching error at the optimum.
    pub energy: f64,
    /// Stitching error with every transform the identity.
    pub identity_energy: f64,
}

fn stitch_energy(mesh: &TriMesh, annuli: &[AnnulusMap], interfaces: &[(usize, usize, Vec<usize>)], t: &[SimilarityParams]) -> f64 {
    let mut e = 0.0;
    for (k, l, edges) in interfaces {
        for (v, ds) in interface_weights(mesh, edges) {
            if let (Some(a), Some(b)) = (annuli[*k].vertices.get(v), annuli[*l].vertices.get(v)) {
                let d = (t[*k].alpha * a + t[*k].gamma) - (t[*l].alpha * b + t[*l].gamma);
                e += ds * d.norm_sqr();
            }
        }
    }
    e
}

/// Linear least squares for `T_k(z) = α_k z + γ_k` with `T_0` the identity.
/// `interfaces` lists `(k, l, shared edges)` between annulus regions.
pub fn global_weld(mesh: &TriMesh, annuli: &[AnnulusMap], interfaces: &[(usize, usize, Vec<usize>)]) -> Result<GlobalWeld> {
    let n = annuli.len();
    let ident = vec![SimilarityParams::identity(); n];
    let identity_energy = stitch_energy(mesh, annuli, interfaces, &ident);
    if n <= 1 {
        return Ok(GlobalWeld {
            transforms: ident,
            energy: identity_energy,
            identity_energy,
        });
    }
    let mut adj = vec![Vec::new(); n];
    for (k, l, e) in interfaces {
        if !e.is_empty() {
            adj[*k].push(*l);
            adj[*l].push(*k);
        }
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut q = VecDeque::from([0]);
    while let Some(k) = q.pop_front() {
        for &l in &adj[k] {
            if !seen[l] {
                seen[l] = true;
                q.push_back(l);
            }
        }
    }
    if let Some(region) = seen.iter().position(|s| !s) {
        return Err(Error::WeldUnderdetermined { region });
    }
    let m = 2 * (n - 1);
    let zero = Complex2::new(0.0, 0.0);
    let mut rows: Vec<(Vec<(usize, Complex2)>, Complex2)> = Vec::new();
    for (k, l, edges) in interfaces {
        for (v, ds) in interface_weights(mesh, edges) {
            let (Some(a), Some(b)) = (annuli[*k].vertices.get(v), annuli[*l].vertices.get(v)) else {
                continue;
            };
            let s = ds.sqrt();
            let mut coeffs = Vec::new();
            let mut rhs = zero;
            for (region, z, sign) in [(*k, a, 1.0), (*l, b, -1.0)] {
                if region == 0 {
                    rhs -= s * sign * z;
                } else {
                    coeffs.push((2 * (region - 1), Complex2::new(s * sign, 0.0) * z));
                    coeffs.push((2 * (region - 1) + 1, Complex2::new(s * sign, 0.0)));
                }
            }
            rows.push((coeffs, rhs));
        }
    }
    let mut a = DMatrix::<Complex2>::zeros(rows.len(), m);
    let mut b = DVector::<Complex2>::zeros(rows.len());
    for (r, (coeffs, rhs)) in rows.iter().enumerate() {
        for &(c, v) in coeffs {
            a[(r, c)] += v;
        }
        b[r] = *rhs;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let (imin, smin) = svd.singular_values.argmin();
    if !(smin > 1e-12 * smax) {
        // the loose region owns the largest entry of the null vector
        let v_t = svd.v_t.as_ref().expect("requested");
        let row = v_t.row(imin);
        let (c, _) = row.iter().enumerate().fold((0, -1.0), |acc, (c, v)| if v.norm() > acc.1 { (c, v.norm()) } else { acc });
        return Err(Error::WeldUnderdetermined { region: c / 2 + 1 });
    }
    let x = svd
        .solve(&b, 1e-14 * smax)
        .map_err(|e| Error::SolverFailure(e.to_string()))?;
    let mut transforms = ident;
    for k in 1..n {
        transforms[k] = SimilarityParams {
            alpha: x[2 * (k - 1)],
            gamma: x[2 * (k - 1) + 1],
        };
    }
    let energy = stitch_energy(mesh, annuli, interfaces, &transforms);
    Ok(GlobalWeld {
        transforms,
        energy,
        identity_energy,
    })
}

/// Principal branch of `√(z² + 1)`, the welding map that closes the slit
/// `[−i, i]`.
pub fn slit_weld_map(z: Complex2) -> Complex2 {
    (z * z + 1.0).sqrt()
}
