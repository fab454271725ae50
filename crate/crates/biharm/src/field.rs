//! Element-wise polynomial fields over a mesh.
//!
//! Coefficients are stored in the orthonormal reference basis, so the
//! element mass matrix is `det J` times the identity and projections reduce
//! to quadrature inner products at physical points.

use crate::basis::{basis_dim, eval_basis, AffineMap, BasisTables};
use crate::mesh::Mesh;
use crate::quad::quad_triangle;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field/mesh mismatch: field has {field} elements, mesh has {mesh}")]
    MeshMismatch { field: usize, mesh: usize },
    #[error("rank mismatch: expected {expected:?}, got {got:?}")]
    RankMismatch { expected: Rank, got: Rank },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    /// 2x2 tensor, components ordered row-major: xx, xy, yx, yy.
    Tensor,
}

impl Rank {
    pub fn ncomp(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
            Rank::Tensor => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgField {
    pub rank: Rank,
    pub degree: usize,
    pub n_elems: usize,
    /// layout: elem * (ncomp * dim) + comp * dim + k
    pub coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(rank: Rank, degree: usize, n_elems: usize) -> DgField {
        let len = n_elems * rank.ncomp() * basis_dim(degree);
        DgField {
            rank,
            degree,
            n_elems,
            coeffs: vec![0.0; len],
        }
    }

    pub fn dim(&self) -> usize {
        basis_dim(self.degree)
    }

    pub fn block(&self, e: usize) -> &[f64] {
        let stride = self.rank.ncomp() * self.dim();
        &self.coeffs[e * stride..(e + 1) * stride]
    }

    pub fn comp(&self, e: usize, c: usize) -> &[f64] {
        let dim = self.dim();
        let stride = self.rank.ncomp() * dim;
        &self.coeffs[e * stride + c * dim..e * stride + (c + 1) * dim]
    }

    pub fn comp_mut(&mut self, e: usize, c: usize) -> &mut [f64] {
        let dim = self.dim();
        let stride = self.rank.ncomp() * dim;
        &mut self.coeffs[e * stride + c * dim..e * stride + (c + 1) * dim]
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), FieldError> {
        if self.n_elems != mesh.n_elems() {
            return Err(FieldError::MeshMismatch {
                field: self.n_elems,
                mesh: mesh.n_elems(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &DgField) {
        assert_eq!(self.rank, other.rank);
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.n_elems, other.n_elems);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    /// Value of one component at table point q.
    #[inline]
    pub fn value_at(&self, e: usize, c: usize, tab: &BasisTables, q: usize) -> f64 {
        let coeffs = self.comp(e, c);
        let mut v = 0.0;
        for (k, ck) in coeffs.iter().enumerate() {
            v += ck * tab.val(k, q);
        }
        v
    }

    /// Physical gradient of one component at table point q.
    #[inline]
    pub fn grad_at(&self, e: usize, c: usize, tab: &BasisTables, map: &AffineMap, q: usize) -> [f64; 2] {
        let coeffs = self.comp(e, c);
        let mut g = [0.0; 2];
        for (k, ck) in coeffs.iter().enumerate() {
            let gr = tab.gr(k, q);
            g[0] += ck * gr[0];
            g[1] += ck * gr[1];
        }
        map.push_grad(g)
    }

    /// Physical Hessian (xx, xy, yy) of one component at table point q.
    #[inline]
    pub fn hess_at(&self, e: usize, c: usize, tab: &BasisTables, map: &AffineMap, q: usize) -> [f64; 3] {
        let coeffs = self.comp(e, c);
        let mut h = [0.0; 3];
        for (k, ck) in coeffs.iter().enumerate() {
            let hs = tab.hs(k, q);
            h[0] += ck * hs[0];
            h[1] += ck * hs[1];
            h[2] += ck * hs[2];
        }
        map.push_hess(h)
    }

    /// Physical third derivatives (xxx, xxy, xyy, yyy) of one component.
    #[inline]
    pub fn third_at(&self, e: usize, c: usize, tab: &BasisTables, map: &AffineMap, q: usize) -> [f64; 4] {
        let coeffs = self.comp(e, c);
        let mut t = [0.0; 4];
        for (k, ck) in coeffs.iter().enumerate() {
            let th = tab.th(k, q);
            for d in 0..4 {
                t[d] += ck * th[d];
            }
        }
        map.push_third(t)
    }
}

/// L2 projection of a scalar function onto the degree-p DG space.
///
/// With the orthonormal basis the projection coefficient is the plain
/// quadrature inner product at physical points (the |det J| factors cancel
/// against the element mass matrix).
pub fn project_scalar(
    mesh: &Mesh,
    p: usize,
    quad_degree: usize,
    f: &dyn Fn(f64, f64) -> f64,
) -> DgField {
    let rule = quad_triangle(quad_degree).expect("projection quadrature degree");
    let tab = eval_basis(p, &rule.points, 0).expect("deriv 0");
    let dim = basis_dim(p);
    let mut field = DgField::zeros(Rank::Scalar, p, mesh.n_elems());
    for e in 0..mesh.n_elems() {
        let map = mesh.affine_map(e);
        let vals: Vec<f64> = rule
            .points
            .iter()
            .map(|&r| {
                let x = map.to_phys(r);
                f(x[0], x[1])
            })
            .collect();
        let out = field.comp_mut(e, 0);
        for k in 0..dim {
            let mut c = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                c += w * vals[q] * tab.val(k, q);
            }
            out[k] = c;
        }
    }
    field
}

/// The broken Hessian of a scalar field, expanded in the degree-p tensor DG
/// space (exactly, since the Hessian has degree p-2).
pub fn broken_hessian(mesh: &Mesh, u: &DgField) -> DgField {
    assert_eq!(u.rank, Rank::Scalar);
    let p = u.degree;
    let rule = quad_triangle(2 * p).expect("quadrature degree 2p");
    let tab = eval_basis(p, &rule.points, 2).expect("deriv 2");
    let dim = basis_dim(p);
    let mut out = DgField::zeros(Rank::Tensor, p, u.n_elems);
    // tensor components (xx, xy, yx, yy) from the symmetric Hessian
    for e in 0..u.n_elems {
        let map = mesh.affine_map(e);
        let hess: Vec<[f64; 3]> = (0..rule.points.len())
            .map(|q| u.hess_at(e, 0, &tab, &map, q))
            .collect();
        for (c, pick) in [(0usize, 0usize), (1, 1), (2, 1), (3, 2)] {
            let slot = out.comp_mut(e, c);
            for k in 0..dim {
                let mut v = 0.0;
                for (q, w) in rule.weights.iter().enumerate() {
                    v += w * hess[q][pick] * tab.val(k, q);
                }
                slot[k] = v;
            }
        }
    }
    out
}

/// Elementwise L2 norm of the whole field.
pub fn l2_norm(mesh: &Mesh, field: &DgField) -> f64 {
    let rule = quad_triangle(2 * field.degree).expect("quadrature degree");
    let tab = eval_basis(field.degree, &rule.points, 0).expect("deriv 0");
    let mut total = 0.0;
    for e in 0..field.n_elems {
        let det = 2.0 * mesh.area(e);
        for c in 0..field.rank.ncomp() {
            let mut acc = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                let v = field.value_at(e, c, &tab, q);
                acc += w * v * v;
            }
            total += det * acc;
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square;

    #[test]
    fn projection_reproduces_polynomials() {
        let mesh = unit_square();
        let f = |x: f64, y: f64| 1.0 - 2.0 * x + 3.0 * x * y + y * y;
        let u = project_scalar(&mesh, 2, 6, &f);
        let pts = [[0.2, 0.3], [0.6, 0.1], [0.1, 0.7]];
        let tab = eval_basis(2, &pts, 0).unwrap();
        for e in 0..2 {
            let map = mesh.affine_map(e);
            for q in 0..pts.len() {
                let x = map.to_phys(pts[q]);
                let got = u.value_at(e, 0, &tab, q);
                assert!((got - f(x[0], x[1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn broken_hessian_of_quadratic_is_constant() {
        let mesh = unit_square();
        let u = project_scalar(&mesh, 3, 8, &|x, y| x * x + 3.0 * x * y - 2.0 * y * y + x);
        let h = broken_hessian(&mesh, &u);
        let pts = [[0.25, 0.25], [0.5, 0.2]];
        let tab = eval_basis(3, &pts, 0).unwrap();
        for e in 0..2 {
            for q in 0..pts.len() {
                assert!((h.value_at(e, 0, &tab, q) - 2.0).abs() < 1e-11); // xx
                assert!((h.value_at(e, 1, &tab, q) - 3.0).abs() < 1e-11); // xy
                assert!((h.value_at(e, 2, &tab, q) - 3.0).abs() < 1e-11); // yx
                assert!((h.value_at(e, 3, &tab, q) + 4.0).abs() < 1e-11); // yy
            }
        }
    }

    #[test]
    fn l2_norm_of_constant() {
        let mesh = unit_square();
        let u = project_scalar(&mesh, 2, 6, &|_, _| 3.0);
        // ||3||_{L2(unit square)} = 3
        assert!((l2_norm(&mesh, &u) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_mismatch_detected() {
        let mesh = unit_square();
        let u = DgField::zeros(Rank::Scalar, 2, 5);
        assert!(u.check_mesh(&mesh).is_err());
    }
}
