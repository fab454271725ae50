//! Truncated bivariate Taylor arithmetic of total order three.
//!
//! Polynomial recurrences evaluated in this arithmetic yield exact values
//! and derivatives up to third order at the expansion point (up to
//! rounding), which is how the basis tables obtain the high derivatives the
//! facet terms need without symbolic differentiation.

/// Taylor coefficients c[(i,j)] of f(x0+dx, y0+dy) for i+j <= 3, ordered
/// (0,0),(1,0),(0,1),(2,0),(1,1),(0,2),(3,0),(2,1),(1,2),(0,3).
#[derive(Debug, Clone, Copy)]
pub struct Jet3 {
    pub c: [f64; 10],
}

impl Jet3 {
    pub const ZERO: Jet3 = Jet3 { c: [0.0; 10] };

    pub fn constant(v: f64) -> Jet3 {
        let mut c = [0.0; 10];
        c[0] = v;
        Jet3 { c }
    }

    /// The coordinate function x expanded at x0.
    pub fn var_x(x0: f64) -> Jet3 {
        let mut c = [0.0; 10];
        c[0] = x0;
        c[1] = 1.0;
        Jet3 { c }
    }

    /// The coordinate function y expanded at y0.
    pub fn var_y(y0: f64) -> Jet3 {
        let mut c = [0.0; 10];
        c[0] = y0;
        c[2] = 1.0;
        Jet3 { c }
    }

    /// A linear function a*x + b*y + d expanded at (x0, y0).
    pub fn linear(a: f64, b: f64, d: f64, x0: f64, y0: f64) -> Jet3 {
        let mut c = [0.0; 10];
        c[0] = a * x0 + b * y0 + d;
        c[1] = a;
        c[2] = b;
        Jet3 { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// (f_x, f_y)
    pub fn grad(&self) -> [f64; 2] {
        [self.c[1], self.c[2]]
    }

    /// (f_xx, f_xy, f_yy)
    pub fn hess(&self) -> [f64; 3] {
        [2.0 * self.c[3], self.c[4], 2.0 * self.c[5]]
    }

    /// (f_xxx, f_xxy, f_xyy, f_yyy)
    pub fn third(&self) -> [f64; 4] {
        [
            6.0 * self.c[6],
            2.0 * self.c[7],
            2.0 * self.c[8],
            6.0 * self.c[9],
        ]
    }

    pub fn scale(&self, s: f64) -> Jet3 {
        let mut c = self.c;
        for v in &mut c {
            *v *= s;
        }
        Jet3 { c }
    }

    pub fn add(&self, o: &Jet3) -> Jet3 {
        let mut c = self.c;
        for (v, w) in c.iter_mut().zip(&o.c) {
            *v += w;
        }
        Jet3 { c }
    }

    pub fn sub(&self, o: &Jet3) -> Jet3 {
        let mut c = self.c;
        for (v, w) in c.iter_mut().zip(&o.c) {
            *v -= w;
        }
        Jet3 { c }
    }

    /// a + s*b fused form used by the recurrences.
    pub fn add_scaled(&self, s: f64, o: &Jet3) -> Jet3 {
        let mut c = self.c;
        for (v, w) in c.iter_mut().zip(&o.c) {
            *v += s * w;
        }
        Jet3 { c }
    }

    pub fn mul(&self, o: &Jet3) -> Jet3 {
        // index -> (i, j) exponents
        const IJ: [(usize, usize); 10] = [
            (0, 0),
            (1, 0),
            (0, 1),
            (2, 0),
            (1, 1),
            (0, 2),
            (3, 0),
            (2, 1),
            (1, 2),
            (0, 3),
        ];
        const fn pos(i: usize, j: usize) -> usize {
            let d = i + j;
            d * (d + 1) / 2 + j
        }
        let mut c = [0.0; 10];
        for (p, &(i1, j1)) in IJ.iter().enumerate() {
            if self.c[p] == 0.0 {
                continue;
            }
            for (q, &(i2, j2)) in IJ.iter().enumerate() {
                if i1 + j1 + i2 + j2 > 3 {
                    continue;
                }
                c[pos(i1 + i2, j1 + j2)] += self.c[p] * o.c[q];
            }
        }
        Jet3 { c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_polynomial_derivatives() {
        // f(x,y) = x^3 - 2 x^2 y + 4 y^3 + x y + 5 at (x0,y0)
        let (x0, y0) = (0.7, -0.3);
        let x = Jet3::var_x(x0);
        let y = Jet3::var_y(y0);
        let f = x
            .mul(&x)
            .mul(&x)
            .add(&x.mul(&x).mul(&y).scale(-2.0))
            .add(&y.mul(&y).mul(&y).scale(4.0))
            .add(&x.mul(&y))
            .add(&Jet3::constant(5.0));
        let v = x0.powi(3) - 2.0 * x0 * x0 * y0 + 4.0 * y0.powi(3) + x0 * y0 + 5.0;
        assert!((f.value() - v).abs() < 1e-14);
        let g = f.grad();
        assert!((g[0] - (3.0 * x0 * x0 - 4.0 * x0 * y0 + y0)).abs() < 1e-14);
        assert!((g[1] - (-2.0 * x0 * x0 + 12.0 * y0 * y0 + x0)).abs() < 1e-14);
        let h = f.hess();
        assert!((h[0] - (6.0 * x0 - 4.0 * y0)).abs() < 1e-14);
        assert!((h[1] - (-4.0 * x0 + 1.0)).abs() < 1e-14);
        assert!((h[2] - 24.0 * y0).abs() < 1e-14);
        let t = f.third();
        assert_eq!(t[0], 6.0);
        assert_eq!(t[1], -4.0);
        assert_eq!(t[2], 0.0);
        assert_eq!(t[3], 24.0);
    }
}
