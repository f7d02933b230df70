//! Per-face Jacobians of a planar image of a surface mesh.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::Complex2;
use crate::mesh::{face_frame, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceJacobian {
    /// Derivative from the face's own orthonormal frame to the image plane.
    pub j: Matrix2<f64>,
    /// `√|det J|`.
    pub lambda: f64,
    /// `|f_z̄| / |f_z|`.
    pub mu: f64,
}

/// Beltrami modulus of a real 2×2 derivative.
pub fn beltrami_modulus(j: &Matrix2<f64>) -> f64 {
    let fz = Complex2::new(j[(0, 0)] + j[(1, 1)], j[(1, 0)] - j[(0, 1)]) * 0.5;
    let fzb = Complex2::new(j[(0, 0)] - j[(1, 1)], j[(1, 0)] + j[(0, 1)]) * 0.5;
    if fz.norm() == 0.0 {
        return f64::INFINITY;
    }
    fzb.norm() / fz.norm()
}

/// Jacobian of a single face given its source corners and image corners.
pub fn face_jacobian(src: [Vector2<f64>; 3], img: [Complex2; 3]) -> Option<Matrix2<f64>> {
    let x = Matrix2::from_columns(&[src[1] - src[0], src[2] - src[0]]);
    let w = Matrix2::new(
        img[1].re - img[0].re,
        img[2].re - img[0].re,
        img[1].im - img[0].im,
        img[2].im - img[0].im,
    );
    x.try_inverse().map(|xi| w * xi)
}

pub fn jacobian_field(mesh: &TriMesh, image: &[Complex2]) -> Result<Vec<FaceJacobian>> {
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let p = mesh.vertices();
            let src = face_frame(p[f[0]], p[f[1]], p[f[2]]).ok_or(Error::DegenerateFace { face: fi })?;
            let j = face_jacobian(src, [image[f[0]], image[f[1]], image[f[2]]])
                .ok_or(Error::DegenerateFace { face: fi })?;
            Ok(FaceJacobian {
                j,
                lambda: j.determinant().abs().sqrt(),
                mu: beltrami_modulus(&j),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;

    fn planar(m: &TriMesh, f: impl Fn(f64, f64) -> Complex2) -> Vec<Complex2> {
        m.vertices().iter().map(|p| f(p.x, p.y)).collect()
    }

    #[test]
    fn identity_and_scale() {
        let m = gen::flat_disk(1.0, 0.2).unwrap();
        for jf in jacobian_field(&m, &planar(&m, |x, y| Complex2::new(x, y))).unwrap() {
            assert!((jf.lambda - 1.0).abs() < 1e-12);
            assert!(jf.mu < 1e-12);
            // frame rotation aside, J is orthogonal with det 1
            assert!((jf.j.transpose() * jf.j - Matrix2::identity()).norm() < 1e-12);
        }
        for jf in jacobian_field(&m, &planar(&m, |x, y| Complex2::new(2.5 * x, 2.5 * y))).unwrap() {
            assert!((jf.lambda - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropic_stretch_has_mu_one_third() {
        let m = gen::flat_disk(1.0, 0.2).unwrap();
        for jf in jacobian_field(&m, &planar(&m, |x, y| Complex2::new(2.0 * x, y))).unwrap() {
            assert!((jf.mu - 1.0 / 3.0).abs() < 1e-12, "{}", jf.mu);
        }
    }
}
