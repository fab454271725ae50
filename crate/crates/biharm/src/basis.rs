//! Orthonormal polynomial bases on the reference triangle.
//!
//! The basis is the hierarchical Koornwinder/Dubiner family, L2-orthonormal
//! on the reference triangle {x,y >= 0, x+y <= 1}. The collapsed-coordinate
//! singularity is avoided by running the homogenized three-term recurrences
//! in truncated Taylor (jet) arithmetic, which directly yields values and
//! derivatives up to third order. Element mass matrices are therefore
//! 2|T| times the identity, which the lifting solves and projections rely
//! on throughout the crate.

use crate::dd::{Dd, JetDd};
use crate::jet::Jet3;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("derivative order {0} unsupported (max 3)")]
    DerivTooHigh(usize),
}

/// Dimension of P_p on a triangle.
pub fn basis_dim(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Tabulated basis values and derivatives at a fixed set of reference points.
///
/// Storage is basis-major: entry for basis function k at point q sits at
/// `k * npts + q`. Hessians are (xx, xy, yy); third derivatives are
/// (xxx, xxy, xyy, yyy).
#[derive(Debug, Clone)]
pub struct BasisTables {
    pub degree: usize,
    pub dim: usize,
    pub npts: usize,
    pub max_deriv: usize,
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub hess: Vec<[f64; 3]>,
    pub third: Vec<[f64; 4]>,
}

impl BasisTables {
    #[inline]
    pub fn val(&self, k: usize, q: usize) -> f64 {
        self.value[k * self.npts + q]
    }
    #[inline]
    pub fn gr(&self, k: usize, q: usize) -> [f64; 2] {
        self.grad[k * self.npts + q]
    }
    #[inline]
    pub fn hs(&self, k: usize, q: usize) -> [f64; 3] {
        self.hess[k * self.npts + q]
    }
    #[inline]
    pub fn th(&self, k: usize, q: usize) -> [f64; 4] {
        self.third[k * self.npts + q]
    }
}

/// Evaluate the orthonormal basis of degree `p` at reference points, with
/// all derivatives up to `max_deriv`.
///
/// Basis ordering is hierarchical: total degree d = 0..p, and within each d
/// the Legendre index m = 0..d (n = d - m), so the leading `basis_dim(q)`
/// functions span P_q for every q <= p.
pub fn eval_basis(p: usize, points: &[[f64; 2]], max_deriv: usize) -> Result<BasisTables, BasisError> {
    if max_deriv > 3 {
        return Err(BasisError::DerivTooHigh(max_deriv));
    }
    let dim = basis_dim(p);
    let npts = points.len();
    let mut tab = BasisTables {
        degree: p,
        dim,
        npts,
        max_deriv,
        value: vec![0.0; dim * npts],
        grad: if max_deriv >= 1 { vec![[0.0; 2]; dim * npts] } else { Vec::new() },
        hess: if max_deriv >= 2 { vec![[0.0; 3]; dim * npts] } else { Vec::new() },
        third: if max_deriv >= 3 { vec![[0.0; 4]; dim * npts] } else { Vec::new() },
    };

    // scratch recurrence storage reused across points
    let mut s = vec![Jet3::ZERO; p + 1]; // homogenized Legendre S_m(u, w)
    let mut jn = vec![Jet3::ZERO; p + 1]; // Jacobi J_n^{(2m+1,0)}(b)

    for (q, pt) in points.iter().enumerate() {
        let (x, y) = (pt[0], pt[1]);
        // u = 2x + y - 1, w = 1 - y, b = 2y - 1
        let u = Jet3::linear(2.0, 1.0, -1.0, x, y);
        let w = Jet3::linear(0.0, -1.0, 1.0, x, y);
        let b = Jet3::linear(0.0, 2.0, -1.0, x, y);
        let w2 = w.mul(&w);

        s[0] = Jet3::constant(1.0);
        if p >= 1 {
            s[1] = u;
        }
        for m in 2..=p {
            let mf = m as f64;
            // m S_m = (2m-1) u S_{m-1} - (m-1) w^2 S_{m-2}
            let t1 = u.mul(&s[m - 1]).scale(2.0 * mf - 1.0);
            let t2 = w2.mul(&s[m - 2]).scale(mf - 1.0);
            s[m] = t1.sub(&t2).scale(1.0 / mf);
        }

        for m in 0..=p {
            let alpha = (2 * m + 1) as f64;
            let nmax = p - m;
            jn[0] = Jet3::constant(1.0);
            if nmax >= 1 {
                // J_1^{(a,0)} = (a + (a+2) b) / 2
                jn[1] = b.scale(0.5 * (alpha + 2.0)).add(&Jet3::constant(0.5 * alpha));
            }
            for n in 2..=nmax {
                let nf = n as f64;
                let c0 = 2.0 * nf + alpha;
                let c1 = 2.0 * nf * (nf + alpha) * (c0 - 2.0);
                let c2 = (c0 - 1.0) * alpha * alpha;
                let c3 = (c0 - 2.0) * (c0 - 1.0) * c0;
                let c4 = 2.0 * (nf + alpha - 1.0) * (nf - 1.0) * c0;
                let t = b.scale(c3).add(&Jet3::constant(c2)).mul(&jn[n - 1]);
                jn[n] = t.add_scaled(-c4, &jn[n - 2]).scale(1.0 / c1);
            }
            for n in 0..=nmax {
                let d = m + n;
                let k = d * (d + 1) / 2 + m; // position within the hierarchical ordering
                let norm = (2.0 * (2.0 * m as f64 + 1.0) * (m as f64 + n as f64 + 1.0)).sqrt();
                let phi = s[m].mul(&jn[n]).scale(norm);
                let idx = k * npts + q;
                tab.value[idx] = phi.value();
                if max_deriv >= 1 {
                    tab.grad[idx] = phi.grad();
                }
                if max_deriv >= 2 {
                    tab.hess[idx] = phi.hess();
                }
                if max_deriv >= 3 {
                    tab.third[idx] = phi.third();
                }
            }
        }
    }
    Ok(tab)
}

/// Double-double basis tables (all derivatives up to third order); the
/// extended-precision assembly path runs the same recurrences in dd jets.
#[derive(Clone)]
pub struct BasisTablesDd {
    pub dim: usize,
    pub npts: usize,
    pub value: Vec<Dd>,
    pub grad: Vec<[Dd; 2]>,
    pub hess: Vec<[Dd; 3]>,
    pub third: Vec<[Dd; 4]>,
}

impl BasisTablesDd {
    #[inline]
    pub fn val(&self, k: usize, q: usize) -> Dd {
        self.value[k * self.npts + q]
    }
    #[inline]
    pub fn gr(&self, k: usize, q: usize) -> [Dd; 2] {
        self.grad[k * self.npts + q]
    }
    #[inline]
    pub fn hs(&self, k: usize, q: usize) -> [Dd; 3] {
        self.hess[k * self.npts + q]
    }
    #[inline]
    pub fn th(&self, k: usize, q: usize) -> [Dd; 4] {
        self.third[k * self.npts + q]
    }
}

pub fn eval_basis_dd(p: usize, points: &[[f64; 2]]) -> BasisTablesDd {
    let dim = basis_dim(p);
    let npts = points.len();
    let mut tab = BasisTablesDd {
        dim,
        npts,
        value: vec![Dd::ZERO; dim * npts],
        grad: vec![[Dd::ZERO; 2]; dim * npts],
        hess: vec![[Dd::ZERO; 3]; dim * npts],
        third: vec![[Dd::ZERO; 4]; dim * npts],
    };
    let mut s = vec![JetDd::ZERO; p + 1];
    let mut jn = vec![JetDd::ZERO; p + 1];
    for (q, pt) in points.iter().enumerate() {
        let (x, y) = (pt[0], pt[1]);
        let u = JetDd::linear(2.0, 1.0, -1.0, x, y);
        let w = JetDd::linear(0.0, -1.0, 1.0, x, y);
        let b = JetDd::linear(0.0, 2.0, -1.0, x, y);
        let w2 = w.mul(&w);
        s[0] = JetDd::constant(1.0);
        if p >= 1 {
            s[1] = u;
        }
        for m in 2..=p {
            let mf = m as f64;
            let t1 = u.mul(&s[m - 1]).scale(2.0 * mf - 1.0);
            let t2 = w2.mul(&s[m - 2]).scale(mf - 1.0);
            s[m] = t1.sub(&t2).scale(1.0 / mf);
        }
        for m in 0..=p {
            let alpha = (2 * m + 1) as f64;
            let nmax = p - m;
            jn[0] = JetDd::constant(1.0);
            if nmax >= 1 {
                jn[1] = b.scale(0.5 * (alpha + 2.0)).add(&JetDd::constant(0.5 * alpha));
            }
            for n in 2..=nmax {
                let nf = n as f64;
                let c0 = 2.0 * nf + alpha;
                let c1 = 2.0 * nf * (nf + alpha) * (c0 - 2.0);
                let c2 = (c0 - 1.0) * alpha * alpha;
                let c3 = (c0 - 2.0) * (c0 - 1.0) * c0;
                let c4 = 2.0 * (nf + alpha - 1.0) * (nf - 1.0) * c0;
                let t = b.scale(c3).add(&JetDd::constant(c2)).mul(&jn[n - 1]);
                jn[n] = t.add(&jn[n - 2].scale(-c4)).scale(1.0 / c1);
            }
            for n in 0..=nmax {
                let d = m + n;
                let k = d * (d + 1) / 2 + m;
                let norm = (2.0 * (2.0 * m as f64 + 1.0) * (m as f64 + n as f64 + 1.0)).sqrt();
                let phi = s[m].mul(&jn[n]).scale(norm);
                let idx = k * npts + q;
                tab.value[idx] = phi.value();
                tab.grad[idx] = phi.grad();
                tab.hess[idx] = phi.hess();
                tab.third[idx] = phi.third();
            }
        }
    }
    tab
}

/// Inverse Jacobian and determinant in double-double, built from exact
/// coordinate differences; the h^-1..h^-3 push-forward factors then carry
/// no f64 division noise.
#[derive(Clone, Copy)]
pub struct GeomDd {
    pub det: Dd,
    /// row m, column a holds d(ref_m)/d(phys_a)
    pub inv: [[Dd; 2]; 2],
}

pub fn geom_dd(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> GeomDd {
    let j00 = Dd::diff(b[0], a[0]);
    let j01 = Dd::diff(c[0], a[0]);
    let j10 = Dd::diff(b[1], a[1]);
    let j11 = Dd::diff(c[1], a[1]);
    let det = j00.mul(j11).sub(j01.mul(j10));
    GeomDd {
        det,
        inv: [
            [j11.div(det), j01.neg().div(det)],
            [j10.neg().div(det), j00.div(det)],
        ],
    }
}

impl GeomDd {
    #[inline]
    pub fn push_grad(&self, g: [Dd; 2]) -> [Dd; 2] {
        let k = &self.inv;
        [
            k[0][0].mul(g[0]).add(k[1][0].mul(g[1])),
            k[0][1].mul(g[0]).add(k[1][1].mul(g[1])),
        ]
    }

    #[inline]
    pub fn push_hess(&self, h: [Dd; 3]) -> [Dd; 3] {
        let k = &self.inv;
        let (k00, k01, k10, k11) = (k[0][0], k[0][1], k[1][0], k[1][1]);
        [
            k00.mul(k00).mul(h[0])
                .add(k00.mul(k10).mul(h[1]).mul_f64(2.0))
                .add(k10.mul(k10).mul(h[2])),
            k00.mul(k01).mul(h[0])
                .add(k00.mul(k11).add(k10.mul(k01)).mul(h[1]))
                .add(k10.mul(k11).mul(h[2])),
            k01.mul(k01).mul(h[0])
                .add(k01.mul(k11).mul(h[1]).mul_f64(2.0))
                .add(k11.mul(k11).mul(h[2])),
        ]
    }

    #[inline]
    pub fn push_third(&self, t: [Dd; 4]) -> [Dd; 4] {
        let k = &self.inv;
        let (k00, k01, k10, k11) = (k[0][0], k[0][1], k[1][0], k[1][1]);
        let c3 = |a: Dd, b: Dd, c: Dd| a.mul(b).mul(c);
        [
            c3(k00, k00, k00).mul(t[0])
                .add(c3(k00, k00, k10).mul(t[1]).mul_f64(3.0))
                .add(c3(k00, k10, k10).mul(t[2]).mul_f64(3.0))
                .add(c3(k10, k10, k10).mul(t[3])),
            c3(k00, k00, k01).mul(t[0])
                .add(c3(k00, k00, k11).add(c3(k00, k10, k01).mul_f64(2.0)).mul(t[1]))
                .add(c3(k00, k10, k11).mul_f64(2.0).add(c3(k10, k10, k01)).mul(t[2]))
                .add(c3(k10, k10, k11).mul(t[3])),
            c3(k00, k01, k01).mul(t[0])
                .add(c3(k00, k01, k11).mul_f64(2.0).add(c3(k10, k01, k01)).mul(t[1]))
                .add(c3(k00, k11, k11).add(c3(k10, k01, k11).mul_f64(2.0)).mul(t[2]))
                .add(c3(k10, k11, k11).mul(t[3])),
            c3(k01, k01, k01).mul(t[0])
                .add(c3(k01, k01, k11).mul(t[1]).mul_f64(3.0))
                .add(c3(k01, k11, k11).mul(t[2]).mul_f64(3.0))
                .add(c3(k11, k11, k11).mul(t[3])),
        ]
    }
}

/// Affine map from the reference triangle onto a physical triangle.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub v0: [f64; 2],
    /// columns are v1 - v0 and v2 - v0
    pub jac: [[f64; 2]; 2],
    /// jac^{-1}; row m, column a holds d(ref_m)/d(phys_a)
    pub inv: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    pub fn from_vertices(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> AffineMap {
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        AffineMap { v0: a, jac, inv, det }
    }

    pub fn to_phys(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.v0[0] + self.jac[0][0] * r[0] + self.jac[0][1] * r[1],
            self.v0[1] + self.jac[1][0] * r[0] + self.jac[1][1] * r[1],
        ]
    }

    pub fn to_ref(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.v0[0], x[1] - self.v0[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient: J^{-T} g.
    #[inline]
    pub fn push_grad(&self, g: [f64; 2]) -> [f64; 2] {
        let k = &self.inv;
        [k[0][0] * g[0] + k[1][0] * g[1], k[0][1] * g[0] + k[1][1] * g[1]]
    }

    /// Physical Hessian (xx, xy, yy) from a reference Hessian.
    #[inline]
    pub fn push_hess(&self, h: [f64; 3]) -> [f64; 3] {
        let k = &self.inv;
        let (k00, k01, k10, k11) = (k[0][0], k[0][1], k[1][0], k[1][1]);
        [
            k00 * k00 * h[0] + 2.0 * k00 * k10 * h[1] + k10 * k10 * h[2],
            k00 * k01 * h[0] + (k00 * k11 + k10 * k01) * h[1] + k10 * k11 * h[2],
            k01 * k01 * h[0] + 2.0 * k01 * k11 * h[1] + k11 * k11 * h[2],
        ]
    }

    /// Physical third derivatives (xxx, xxy, xyy, yyy) from reference ones.
    #[inline]
    pub fn push_third(&self, t: [f64; 4]) -> [f64; 4] {
        let k = &self.inv;
        let (k00, k01, k10, k11) = (k[0][0], k[0][1], k[1][0], k[1][1]);
        [
            k00 * k00 * k00 * t[0]
                + 3.0 * k00 * k00 * k10 * t[1]
                + 3.0 * k00 * k10 * k10 * t[2]
                + k10 * k10 * k10 * t[3],
            k00 * k00 * k01 * t[0]
                + (k00 * k00 * k11 + 2.0 * k00 * k10 * k01) * t[1]
                + (2.0 * k00 * k10 * k11 + k10 * k10 * k01) * t[2]
                + k10 * k10 * k11 * t[3],
            k00 * k01 * k01 * t[0]
                + (2.0 * k00 * k01 * k11 + k10 * k01 * k01) * t[1]
                + (k00 * k11 * k11 + 2.0 * k10 * k01 * k11) * t[2]
                + k10 * k11 * k11 * t[3],
            k01 * k01 * k01 * t[0]
                + 3.0 * k01 * k01 * k11 * t[1]
                + 3.0 * k01 * k11 * k11 * t[2]
                + k11 * k11 * k11 * t[3],
        ]
    }
}

/// Nodal (Lagrange) basis of degree p on the uniform barycentric lattice.
///
/// Node ordering: the three vertices (0,0), (1,0), (0,1); then p-1 nodes on
/// each local edge 0:(v0,v1), 1:(v1,v2), 2:(v2,v0), walked from the first
/// vertex of the edge; then interior nodes. `to_modal` expresses nodal shape
/// j as `sum_k to_modal[(k, j)] * phi_k` in the orthonormal basis.
#[derive(Debug, Clone)]
pub struct NodalBasis {
    pub p: usize,
    pub dim: usize,
    pub nodes: Vec<[f64; 2]>,
    pub to_modal: DMatrix<f64>,
}

pub fn lattice_nodes(p: usize) -> Vec<[f64; 2]> {
    assert!(p >= 1);
    let pf = p as f64;
    let mut nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    for k in 1..p {
        nodes.push([k as f64 / pf, 0.0]);
    }
    for k in 1..p {
        nodes.push([(p - k) as f64 / pf, k as f64 / pf]);
    }
    for k in 1..p {
        nodes.push([0.0, (p - k) as f64 / pf]);
    }
    for i in 1..p {
        for j in 1..p {
            if i + j <= p - 1 {
                nodes.push([i as f64 / pf, j as f64 / pf]);
            }
        }
    }
    debug_assert_eq!(nodes.len(), basis_dim(p));
    nodes
}

pub fn nodal_basis(p: usize) -> NodalBasis {
    let nodes = lattice_nodes(p);
    let dim = basis_dim(p);
    let tab = eval_basis(p, &nodes, 0).expect("deriv 0 is always supported");
    let mut v = DMatrix::zeros(dim, dim);
    for q in 0..dim {
        for k in 0..dim {
            v[(q, k)] = tab.val(k, q);
        }
    }
    let to_modal = v.lu().try_inverse().expect("lattice Vandermonde is invertible");
    NodalBasis { p, dim, nodes, to_modal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::quad_triangle;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn p1_values_at_barycenter() {
        // The barycentric coordinates are linear combinations of the first
        // three orthonormal functions; check them through the nodal basis.
        let nb = nodal_basis(1);
        let tab = eval_basis(1, &[[1.0 / 3.0, 1.0 / 3.0]], 2).unwrap();
        for j in 0..3 {
            let mut val = 0.0;
            let mut hess = [0.0; 3];
            for k in 0..3 {
                let c = nb.to_modal[(k, j)];
                val += c * tab.val(k, 0);
                let h = tab.hs(k, 0);
                for d in 0..3 {
                    hess[d] += c * h[d];
                }
            }
            assert!((val - 1.0 / 3.0).abs() < 1e-14);
            for d in 0..3 {
                assert!(hess[d].abs() < 1e-13, "p=1 Hessian must vanish");
            }
        }
    }

    #[test]
    fn orthonormal_on_reference_triangle() {
        for p in [1usize, 3, 6, 12, 20] {
            let rule = quad_triangle(2 * p).unwrap();
            let tab = eval_basis(p, &rule.points, 0).unwrap();
            let dim = tab.dim;
            let mut max_err: f64 = 0.0;
            for i in 0..dim {
                for j in i..dim {
                    let mut g = 0.0;
                    for (q, w) in rule.weights.iter().enumerate() {
                        g += w * tab.val(i, q) * tab.val(j, q);
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    max_err = max_err.max((g - target).abs());
                }
            }
            assert!(max_err < 5e-13, "p={p}: Gram deviation {max_err}");
        }
    }

    #[test]
    fn third_derivative_of_cubic() {
        // x^3 expanded in the basis must give d3/dx3 = 6 exactly.
        let p = 3;
        let rule = quad_triangle(2 * p).unwrap();
        let tab = eval_basis(p, &rule.points, 0).unwrap();
        // project x^3 onto the orthonormal basis (reference mass = identity,
        // so the coefficient is just the inner product)
        let dim = tab.dim;
        let mut coeff = vec![0.0; dim];
        for (k, c) in coeff.iter_mut().enumerate() {
            let mut v = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                let x = rule.points[q][0];
                v += w * x * x * x * tab.val(k, q);
            }
            *c = v;
        }
        let pts = [[0.21, 0.37], [0.6, 0.1], [0.05, 0.8]];
        let tab2 = eval_basis(p, &pts, 3).unwrap();
        for q in 0..pts.len() {
            let mut d3 = [0.0; 4];
            for k in 0..dim {
                let t = tab2.th(k, q);
                for d in 0..4 {
                    d3[d] += coeff[k] * t[d];
                }
            }
            assert!((d3[0] - 6.0).abs() < 1e-11, "xxx: {}", d3[0]);
            for d in 1..4 {
                assert!(d3[d].abs() < 1e-11);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for p in [2usize, 4, 6] {
            let dim = basis_dim(p);
            let coeff: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eval = |x: f64, y: f64, d: usize| -> Vec<f64> {
                let tab = eval_basis(p, &[[x, y]], d).unwrap();
                let mut out = vec![0.0; 10];
                for k in 0..dim {
                    out[0] += coeff[k] * tab.val(k, 0);
                    if d >= 1 {
                        let g = tab.gr(k, 0);
                        out[1] += coeff[k] * g[0];
                        out[2] += coeff[k] * g[1];
                    }
                    if d >= 2 {
                        let h = tab.hs(k, 0);
                        out[3] += coeff[k] * h[0];
                        out[4] += coeff[k] * h[1];
                        out[5] += coeff[k] * h[2];
                    }
                    if d >= 3 {
                        let t = tab.th(k, 0);
                        for i in 0..4 {
                            out[6 + i] += coeff[k] * t[i];
                        }
                    }
                }
                out
            };
            let (x0, y0) = (0.31, 0.41);
            let h = 1e-5;
            let f = |x: f64, y: f64| eval(x, y, 0)[0];
            let full = eval(x0, y0, 3);
            let fd_x = (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h);
            let fd_y = (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h);
            let fd_xx = (f(x0 + h, y0) - 2.0 * f(x0, y0) + f(x0 - h, y0)) / (h * h);
            let fd_yy = (f(x0, y0 + h) - 2.0 * f(x0, y0) + f(x0, y0 - h)) / (h * h);
            let fd_xy = (f(x0 + h, y0 + h) - f(x0 + h, y0 - h) - f(x0 - h, y0 + h)
                + f(x0 - h, y0 - h))
                / (4.0 * h * h);
            let scale = 1.0 + full.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((full[1] - fd_x).abs() / scale < 1e-6, "p={p} fx");
            assert!((full[2] - fd_y).abs() / scale < 1e-6, "p={p} fy");
            assert!((full[3] - fd_xx).abs() / scale < 1e-4, "p={p} fxx");
            assert!((full[4] - fd_xy).abs() / scale < 1e-4, "p={p} fxy");
            assert!((full[5] - fd_yy).abs() / scale < 1e-4, "p={p} fyy");
            // third derivatives: central differences of the analytic Hessian
            let hess = |x: f64, y: f64| {
                let e = eval(x, y, 2);
                [e[3], e[4], e[5]]
            };
            let hp = hess(x0 + h, y0);
            let hm = hess(x0 - h, y0);
            let fd_xxx = (hp[0] - hm[0]) / (2.0 * h);
            let fd_xxy = (hp[1] - hm[1]) / (2.0 * h);
            let hpy = hess(x0, y0 + h);
            let hmy = hess(x0, y0 - h);
            let fd_xyy = (hpy[1] - hmy[1]) / (2.0 * h);
            let fd_yyy = (hpy[2] - hmy[2]) / (2.0 * h);
            assert!((full[6] - fd_xxx).abs() / scale < 1e-5, "p={p} fxxx");
            assert!((full[7] - fd_xxy).abs() / scale < 1e-5, "p={p} fxxy");
            assert!((full[8] - fd_xyy).abs() / scale < 1e-5, "p={p} fxyy");
            assert!((full[9] - fd_yyy).abs() / scale < 1e-5, "p={p} fyyy");
        }
    }

    #[test]
    fn pushforward_gradient_on_monomials() {
        // For an affine map with Jacobian J the physical gradient is
        // J^{-T} (reference gradient); check on x and y themselves.
        let map = AffineMap::from_vertices([0.2, -0.1], [1.7, 0.4], [0.6, 2.1]);
        // the physical monomial x, seen as a function of reference coords,
        // must push forward to gradient (1, 0)
        let r = [0.3, 0.25];
        let eps = 1e-7;
        let xr = map.to_phys(r);
        let gx_ref = [
            (map.to_phys([r[0] + eps, r[1]])[0] - map.to_phys([r[0] - eps, r[1]])[0]) / (2.0 * eps),
            (map.to_phys([r[0], r[1] + eps])[0] - map.to_phys([r[0], r[1] - eps])[0]) / (2.0 * eps),
        ];
        let g_phys = map.push_grad(gx_ref);
        assert!((g_phys[0] - 1.0).abs() < 1e-8);
        assert!(g_phys[1].abs() < 1e-8);
        // round trip of the map itself
        let back = map.to_ref(xr);
        assert!((back[0] - r[0]).abs() < 1e-14 && (back[1] - r[1]).abs() < 1e-14);
    }

    #[test]
    fn deriv_order_cap() {
        assert!(matches!(
            eval_basis(2, &[[0.1, 0.1]], 4),
            Err(BasisError::DerivTooHigh(4))
        ));
    }

    #[test]
    fn nodal_basis_is_interpolatory() {
        for p in [1usize, 2, 4] {
            let nb = nodal_basis(p);
            let tab = eval_basis(p, &nb.nodes, 0).unwrap();
            for j in 0..nb.dim {
                for q in 0..nb.dim {
                    let mut v = 0.0;
                    for k in 0..nb.dim {
                        v += nb.to_modal[(k, j)] * tab.val(k, q);
                    }
                    let target = if j == q { 1.0 } else { 0.0 };
                    assert!((v - target).abs() < 1e-10, "p={p} node {q} shape {j}: {v}");
                }
            }
        }
    }
}
