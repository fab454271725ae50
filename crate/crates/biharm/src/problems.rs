//! Analytic test problems: the corner-singular solution on the L-shaped
//! domain, the trigonometric solution on the unit square, and a polynomial
//! manufactured-solution hook for tests.

use crate::mesh::{lshape, unit_square, Mesh};
use std::f64::consts::PI;
use thiserror::Error;

/// Singularity exponent of the L-shape solution.
pub const Z_EXPONENT: f64 = 0.544483736782464;
/// Interior angle at the re-entrant corner.
pub const OMEGA: f64 = 3.0 * PI / 2.0;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("derivative requested at the singular corner r = 0")]
    CornerSingularity,
    #[error("unknown problem tag {0:?}")]
    UnknownTag(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Square,
    Lshape,
}

/// u = sum c x^i y^j with closed-form derivatives; used as a manufactured
/// solution in consistency tests.
#[derive(Debug, Clone)]
pub struct PolySolution {
    pub terms: Vec<(u32, u32, f64)>,
    pub domain: Domain,
}

fn falling(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    ((n - k + 1)..=n).fold(1.0, |acc, v| acc * v as f64)
}

fn powi(x: f64, e: i64) -> f64 {
    if e < 0 {
        0.0
    } else {
        x.powi(e as i32)
    }
}

impl PolySolution {
    fn deriv(&self, x: f64, y: f64, dx: u32, dy: u32) -> f64 {
        let mut v = 0.0;
        for &(i, j, c) in &self.terms {
            if dx > i || dy > j {
                continue;
            }
            v += c
                * falling(i, dx)
                * falling(j, dy)
                * powi(x, i as i64 - dx as i64)
                * powi(y, j as i64 - dy as i64);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub enum TestProblem {
    /// u2 = sin^2(pi x) sin^2(pi y) on the unit square; clamped data vanish.
    SquareSine,
    /// u1 = r^{1+z} g(theta) on the L-shape; biharmonic with inhomogeneous
    /// clamped data on the outer boundary.
    LshapeSingular,
    Poly(PolySolution),
}

/// Angular factor of the L-shape solution and its first two derivatives.
///
/// The form is fixed by requiring clamped edges at the corner:
/// g(0) = g'(0) = g(omega) = g'(omega) = 0 with z the tabulated root.
pub fn g_theta(theta: f64) -> (f64, f64, f64) {
    let z = Z_EXPONENT;
    let (zm, zp) = (z - 1.0, z + 1.0);
    let k1 = (zm * OMEGA).sin() / zm - (zp * OMEGA).sin() / zp;
    let k2 = (zm * OMEGA).cos() - (zp * OMEGA).cos();
    let g = k1 * ((zm * theta).cos() - (zp * theta).cos())
        - k2 * ((zm * theta).sin() / zm - (zp * theta).sin() / zp);
    let dg = k1 * (-zm * (zm * theta).sin() + zp * (zp * theta).sin())
        - k2 * ((zm * theta).cos() - (zp * theta).cos());
    let ddg = k1 * (-zm * zm * (zm * theta).cos() + zp * zp * (zp * theta).cos())
        - k2 * (-zm * (zm * theta).sin() + zp * (zp * theta).sin());
    (g, dg, ddg)
}

/// Polar angle in [0, 2 pi) measured from the ray {x > 0, y = 0}.
fn polar(x: f64, y: f64) -> (f64, f64) {
    let r = x.hypot(y);
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    (r, theta)
}

#[derive(Debug, Clone, Copy)]
pub struct PointValues {
    pub value: f64,
    pub grad: [f64; 2],
    /// xx, xy, yy
    pub hess: [f64; 3],
}

/// Value, gradient, and Hessian of the singular solution. Derivative
/// evaluation exactly at the corner is rejected.
pub fn u1_eval(x: f64, y: f64, deriv: usize) -> Result<PointValues, ProblemError> {
    let z = Z_EXPONENT;
    let (r, theta) = polar(x, y);
    if deriv >= 1 && r == 0.0 {
        return Err(ProblemError::CornerSingularity);
    }
    let (g, dg, ddg) = g_theta(theta);
    let value = r.powf(1.0 + z) * g;
    if deriv == 0 {
        return Ok(PointValues {
            value,
            grad: [0.0; 2],
            hess: [0.0; 3],
        });
    }
    let (st, ct) = theta.sin_cos();
    let ur = (1.0 + z) * r.powf(z) * g;
    let ut = r.powf(1.0 + z) * dg;
    let gx = ct * ur - st * ut / r;
    let gy = st * ur + ct * ut / r;
    if deriv == 1 {
        return Ok(PointValues {
            value,
            grad: [gx, gy],
            hess: [0.0; 3],
        });
    }
    let urr = (1.0 + z) * z * r.powf(z - 1.0) * g;
    let urt = (1.0 + z) * r.powf(z) * dg;
    let utt = r.powf(1.0 + z) * ddg;
    let a = urr;
    let b = urt / r - ut / (r * r);
    let c = ur / r + utt / (r * r);
    let uxx = ct * ct * a - 2.0 * st * ct * b + st * st * c;
    let uyy = st * st * a + 2.0 * st * ct * b + ct * ct * c;
    let uxy = st * ct * (a - c) + (ct * ct - st * st) * b;
    Ok(PointValues {
        value,
        grad: [gx, gy],
        hess: [uxx, uxy, uyy],
    })
}

/// Value, gradient, Hessian of u2, all in closed trigonometric form.
pub fn u2_eval(x: f64, y: f64) -> PointValues {
    let sx = (PI * x).sin();
    let sy = (PI * y).sin();
    let (s2x, s2y) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
    let value = sx * sx * sy * sy;
    let gx = PI * s2x * sy * sy;
    let gy = PI * s2y * sx * sx;
    let uxx = 2.0 * PI * PI * (2.0 * PI * x).cos() * sy * sy;
    let uyy = 2.0 * PI * PI * (2.0 * PI * y).cos() * sx * sx;
    let uxy = PI * PI * s2x * s2y;
    PointValues {
        value,
        grad: [gx, gy],
        hess: [uxx, uxy, uyy],
    }
}

/// f2 = biharmonic of u2 in closed form.
pub fn f2(x: f64, y: f64) -> f64 {
    let sx2 = (PI * x).sin().powi(2);
    let sy2 = (PI * y).sin().powi(2);
    PI.powi(4) * (64.0 * sx2 * sy2 - 24.0 * sx2 - 24.0 * sy2 + 8.0)
}

impl TestProblem {
    pub fn from_tag(tag: &str) -> Result<TestProblem, ProblemError> {
        match tag {
            "square-sine" => Ok(TestProblem::SquareSine),
            "lshape-singular" => Ok(TestProblem::LshapeSingular),
            other => Err(ProblemError::UnknownTag(other.to_string())),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TestProblem::SquareSine => "square-sine",
            TestProblem::LshapeSingular => "lshape-singular",
            TestProblem::Poly(_) => "poly",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            TestProblem::SquareSine => Domain::Square,
            TestProblem::LshapeSingular => Domain::Lshape,
            TestProblem::Poly(p) => p.domain,
        }
    }

    pub fn initial_mesh(&self) -> Mesh {
        match self.domain() {
            Domain::Square => unit_square(),
            Domain::Lshape => lshape(),
        }
    }

    /// Location of the corner singularity, when there is one.
    pub fn singular_corner(&self) -> Option<[f64; 2]> {
        match self {
            TestProblem::LshapeSingular => Some([0.0, 0.0]),
            _ => None,
        }
    }

    pub fn u(&self, x: f64, y: f64) -> f64 {
        match self {
            TestProblem::SquareSine => u2_eval(x, y).value,
            TestProblem::LshapeSingular => u1_eval(x, y, 0).expect("value is regular").value,
            TestProblem::Poly(p) => p.deriv(x, y, 0, 0),
        }
    }

    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            TestProblem::SquareSine => u2_eval(x, y).grad,
            TestProblem::LshapeSingular => u1_eval(x, y, 1)
                .expect("gradient requested at the singular corner")
                .grad,
            TestProblem::Poly(p) => [p.deriv(x, y, 1, 0), p.deriv(x, y, 0, 1)],
        }
    }

    /// Hessian as (xx, xy, yy).
    pub fn hess(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            TestProblem::SquareSine => u2_eval(x, y).hess,
            TestProblem::LshapeSingular => u1_eval(x, y, 2)
                .expect("Hessian requested at the singular corner")
                .hess,
            TestProblem::Poly(p) => [
                p.deriv(x, y, 2, 0),
                p.deriv(x, y, 1, 1),
                p.deriv(x, y, 0, 2),
            ],
        }
    }

    /// Right-hand side f = biharmonic of u. The singular solution is
    /// biharmonic, so its f is identically zero.
    pub fn rhs(&self, x: f64, y: f64) -> f64 {
        match self {
            TestProblem::SquareSine => f2(x, y),
            TestProblem::LshapeSingular => 0.0,
            TestProblem::Poly(p) => {
                p.deriv(x, y, 4, 0) + 2.0 * p.deriv(x, y, 2, 2) + p.deriv(x, y, 0, 4)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn angular_factor_clamped_at_both_edges() {
        for theta in [0.0, OMEGA] {
            let (g, dg, _) = g_theta(theta);
            assert!(g.abs() < 1e-12, "g({theta}) = {g}");
            assert!(dg.abs() < 1e-12, "g'({theta}) = {dg}");
        }
    }

    #[test]
    fn u1_vanishes_on_corner_edges() {
        // theta = 0 edge: (x, 0) for x > 0; theta = 3 pi / 2 edge: (0, y), y < 0
        for t in [0.1, 0.35, 0.77, 0.99] {
            let v = u1_eval(t, 0.0, 1).unwrap();
            assert!(v.value.abs() < 1e-13);
            assert!(v.grad[1].abs() < 1e-12, "normal derivative on y=0 edge");
            let w = u1_eval(0.0, -t, 1).unwrap();
            assert!(w.value.abs() < 1e-12);
            assert!(w.grad[0].abs() < 1e-11, "normal derivative on x=0 edge");
        }
    }

    #[test]
    fn u1_biharmonic_by_finite_differences() {
        // 13-point biharmonic stencil on u-values only
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let u = |x: f64, y: f64| u1_eval(x, y, 0).unwrap().value;
        for _ in 0..12 {
            // random interior points of the L-shape away from the corner
            let (x, y) = loop {
                let x: f64 = rng.random_range(-0.95..0.95);
                let y: f64 = rng.random_range(-0.95..0.95);
                let inside = !(x >= 0.0 && y <= 0.0);
                if inside && x.hypot(y) > 0.2 {
                    break (x, y);
                }
            };
            let h = 0.01 * x.hypot(y);
            let stencil = 20.0 * u(x, y)
                - 8.0 * (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h))
                + 2.0 * (u(x + h, y + h) + u(x + h, y - h) + u(x - h, y + h) + u(x - h, y - h))
                + (u(x + 2.0 * h, y) + u(x - 2.0 * h, y) + u(x, y + 2.0 * h) + u(x, y - 2.0 * h));
            let scale = 20.0 * u(x, y).abs()
                + 8.0 * (u(x + h, y).abs() + u(x - h, y).abs() + u(x, y + h).abs() + u(x, y - h).abs());
            let residual = stencil.abs() / scale.max(1e-30);
            assert!(residual < 1e-4, "biharmonic residual {residual} at ({x},{y})");
        }
    }

    #[test]
    fn u1_hessian_matches_finite_differences() {
        let u = |x: f64, y: f64| u1_eval(x, y, 0).unwrap().value;
        for (x, y) in [(0.4, 0.3), (-0.6, 0.2), (-0.3, -0.5), (0.15, 0.8)] {
            let r = f64::hypot(x, y);
            let h = 1e-5 * r;
            let v = u1_eval(x, y, 2).unwrap();
            let fd_xx = (u(x + h, y) - 2.0 * u(x, y) + u(x - h, y)) / (h * h);
            let fd_yy = (u(x, y + h) - 2.0 * u(x, y) + u(x, y - h)) / (h * h);
            let fd_xy =
                (u(x + h, y + h) - u(x + h, y - h) - u(x - h, y + h) + u(x - h, y - h)) / (4.0 * h * h);
            let scale = v.hess.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            assert!((v.hess[0] - fd_xx).abs() / scale < 1e-5);
            assert!((v.hess[1] - fd_xy).abs() / scale < 1e-5);
            assert!((v.hess[2] - fd_yy).abs() / scale < 1e-5);
        }
    }

    #[test]
    fn corner_derivative_rejected() {
        assert!(matches!(
            u1_eval(0.0, 0.0, 1),
            Err(ProblemError::CornerSingularity)
        ));
        assert!(u1_eval(0.0, 0.0, 0).is_ok());
    }

    #[test]
    fn u2_basic_values() {
        assert!((u2_eval(0.5, 0.5).value - 1.0).abs() < 1e-15);
        // clamped data on the whole boundary
        for t in [0.0, 0.3, 0.71, 1.0] {
            for (x, y) in [(t, 0.0), (t, 1.0), (0.0, t), (1.0, t)] {
                let v = u2_eval(x, y);
                assert!(v.value.abs() < 1e-14);
                assert!(v.grad[0].abs() < 1e-13 && v.grad[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn f2_matches_symbolic_oracle() {
        // frozen values from symbolic differentiation of sin^2 sin^2
        let cases = [
            (0.3, 0.7, 389.63636413600966),
            (0.5, 0.5, 2337.818184816058),
            (0.25, 0.1, -315.22244021249674),
        ];
        for (x, y, want) in cases {
            let got = f2(x, y);
            assert!(
                (got - want).abs() < 1e-10 * want.abs().max(1.0),
                "f2({x},{y}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn f2_matches_finite_difference_biharmonic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u = |x: f64, y: f64| u2_eval(x, y).value;
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.1..0.9);
            let y: f64 = rng.random_range(0.1..0.9);
            let h = 1e-2;
            let stencil = (20.0 * u(x, y)
                - 8.0 * (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h))
                + 2.0 * (u(x + h, y + h) + u(x + h, y - h) + u(x - h, y + h) + u(x - h, y - h))
                + (u(x + 2.0 * h, y) + u(x - 2.0 * h, y) + u(x, y + 2.0 * h) + u(x, y - 2.0 * h)))
                / h.powi(4);
            let want = f2(x, y);
            assert!(
                (stencil - want).abs() < 1e-2 * want.abs().max(1e3),
                "FD {stencil} vs f2 {want} at ({x},{y})"
            );
        }
    }

    #[test]
    fn poly_biharmonic_closed_form() {
        // u = x^4: biharmonic = 24; u = x^2 y^2: biharmonic = 8
        let p = TestProblem::Poly(PolySolution {
            terms: vec![(4, 0, 1.0), (2, 2, 1.0)],
            domain: Domain::Square,
        });
        assert!((p.rhs(0.3, 0.9) - 32.0).abs() < 1e-12);
        assert!((p.u(2.0, 3.0) - (16.0 + 36.0)).abs() < 1e-12);
        assert!((p.hess(1.0, 1.0)[0] - (12.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn problem_tags() {
        assert!(TestProblem::from_tag("square-sine").is_ok());
        assert!(TestProblem::from_tag("lshape-singular").is_ok());
        assert!(TestProblem::from_tag("bogus").is_err());
    }
}
