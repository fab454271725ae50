//! Quadrature on the reference triangle and on edges.
//!
//! Triangle rules are collapsed-coordinate tensor rules: Gauss-Legendre in
//! the first direction and Gauss-Jacobi with weight (1-t) in the second, so
//! the declared exactness holds for any total polynomial degree. Nodes and
//! weights come from the Golub-Welsch eigenvalue problem of the recurrence
//! (Jacobi) matrix.

use thiserror::Error;

/// Reference triangle: vertices (0,0), (1,0), (0,1); area 1/2.
pub const REF_TRIANGLE_AREA: f64 = 0.5;

/// Highest supported exactness degree for both rule families.
pub const MAX_EXACTNESS: usize = 80;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("requested exactness degree {0} exceeds the implemented family (max {MAX_EXACTNESS})")]
    DegreeTooHigh(usize),
}

/// Quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

/// Quadrature rule on the reference edge [0,1].
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

/// Eigenvalues and first eigenvector components of a symmetric tridiagonal
/// matrix, by the implicit-shift QL iteration. `diag` holds the diagonal,
/// `off[i]` couples rows i and i+1.
fn tridiag_eig_first_components(diag: &mut [f64], off: &mut [f64]) -> Vec<f64> {
    let n = diag.len();
    let mut z = vec![0.0; n];
    if n == 0 {
        return z;
    }
    z[0] = 1.0;
    // pad so off[n-1] exists
    debug_assert!(off.len() >= n);
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 60, "tridiagonal QL failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    z
}

/// Gauss nodes/weights from monic three-term recurrence coefficients
/// pi_{k+1} = (t - a_k) pi_k - b_k pi_{k-1}, with mu0 the weight integral.
fn golub_welsch(a: &[f64], b: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut diag = a.to_vec();
    let mut off = vec![0.0; n];
    for k in 1..n {
        off[k - 1] = b[k].sqrt();
    }
    let z = tridiag_eig_first_components(&mut diag, &mut off);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    let nodes: Vec<f64> = idx.iter().map(|&i| diag[i]).collect();
    let weights: Vec<f64> = idx.iter().map(|&i| mu0 * z[i] * z[i]).collect();
    (nodes, weights)
}

/// Gauss-Legendre on (0,1); exact for polynomials of degree 2n-1.
/// Weights sum to 1.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 1..n {
        let kf = k as f64;
        b[k] = kf * kf / (4.0 * kf * kf - 1.0);
    }
    let (t, w) = golub_welsch(&a, &b, 2.0);
    (
        t.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Gauss-Jacobi with weight (1-t) on (0,1); exact for the polynomial part of
/// degree 2n-1. Weights sum to 1/2 = int_0^1 (1-t) dt.
fn gauss_jacobi10_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    // monic Jacobi(alpha=1, beta=0) on (-1,1)
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let kf = k as f64;
        a[k] = -1.0 / ((2.0 * kf + 1.0) * (2.0 * kf + 3.0));
        if k >= 1 {
            b[k] = kf * (kf + 1.0) / ((2.0 * kf + 1.0) * (2.0 * kf + 1.0));
        }
    }
    let (t, w) = golub_welsch(&a, &b, 2.0);
    (
        t.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.25 * v).collect(),
    )
}

fn points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

/// Rule on the reference triangle exact for total degree `degree`.
pub fn quad_triangle(degree: usize) -> Result<TriangleRule, QuadError> {
    if degree > MAX_EXACTNESS {
        return Err(QuadError::DegreeTooHigh(degree));
    }
    let n = points_for_degree(degree);
    let (s, ws) = gauss_legendre_01(n);
    let (t, wt) = gauss_jacobi10_01(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([s[i] * (1.0 - t[j]), t[j]]);
            weights.push(ws[i] * wt[j]);
        }
    }
    Ok(TriangleRule {
        points,
        weights,
        exactness: degree,
    })
}

/// Rule on the reference edge (0,1) exact for degree `degree`.
pub fn quad_edge(degree: usize) -> Result<EdgeRule, QuadError> {
    if degree > MAX_EXACTNESS {
        return Err(QuadError::DegreeTooHigh(degree));
    }
    let n = points_for_degree(degree);
    let (points, weights) = gauss_legendre_01(n);
    Ok(EdgeRule {
        points,
        weights,
        exactness: degree,
    })
}
