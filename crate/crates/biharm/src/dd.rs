//! Double-double arithmetic for the assembly path.
//!
//! The stiffness integrands reach magnitudes of order h^-3 .. h^-4 while
//! many finished entries are tiny or exactly zero (orthogonality of the
//! basis). Evaluated in f64, such entries carry absolute noise at the ulp
//! of the *integrand*, and the near-singular fine-mesh systems amplify that
//! into the solution. Running the tables, push-forwards, and quadrature
//! sums in double-double and rounding only the finished entry keeps the
//! noise at the ulp of the entry itself.

/// Unevaluated sum hi + lo with |lo| <= ulp(hi)/2.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b|
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, f64::mul_add(a, b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    /// Exact difference of two f64 values.
    #[inline]
    pub fn diff(a: f64, b: f64) -> Dd {
        let (s, e) = two_sum(a, -b);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    #[inline]
    pub fn add_f64(self, o: f64) -> Dd {
        let (s, e) = two_sum(self.hi, o);
        let e = e + self.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, o: f64) -> Dd {
        let (p, e) = two_prod(self.hi, o);
        let e = e + self.lo * o;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn div(self, o: Dd) -> Dd {
        let q0 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q0));
        let q1 = r.hi / o.hi;
        let r2 = r.sub(o.mul_f64(q1));
        let q2 = r2.hi / o.hi;
        let (hi, lo) = quick_two_sum(q0, q1);
        Dd { hi, lo }.add_f64(q2)
    }

    #[inline]
    pub fn recip(self) -> Dd {
        Dd::from_f64(1.0).div(self)
    }
}

/// Order-3 bivariate Taylor jet over double-double coefficients; mirrors
/// the f64 jet used elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct JetDd {
    pub c: [Dd; 10],
}

impl JetDd {
    pub const ZERO: JetDd = JetDd { c: [Dd::ZERO; 10] };

    pub fn constant(v: f64) -> JetDd {
        let mut c = [Dd::ZERO; 10];
        c[0] = Dd::from_f64(v);
        JetDd { c }
    }

    pub fn linear(a: f64, b: f64, d: f64, x0: f64, y0: f64) -> JetDd {
        let mut c = [Dd::ZERO; 10];
        c[0] = Dd::from_f64(a)
            .mul_f64(x0)
            .add(Dd::from_f64(b).mul_f64(y0))
            .add_f64(d);
        c[1] = Dd::from_f64(a);
        c[2] = Dd::from_f64(b);
        JetDd { c }
    }

    pub fn add(&self, o: &JetDd) -> JetDd {
        let mut c = self.c;
        for (v, w) in c.iter_mut().zip(&o.c) {
            *v = v.add(*w);
        }
        JetDd { c }
    }

    pub fn sub(&self, o: &JetDd) -> JetDd {
        let mut c = self.c;
        for (v, w) in c.iter_mut().zip(&o.c) {
            *v = v.sub(*w);
        }
        JetDd { c }
    }

    pub fn scale(&self, s: f64) -> JetDd {
        let mut c = self.c;
        for v in &mut c {
            *v = v.mul_f64(s);
        }
        JetDd { c }
    }

    pub fn mul(&self, o: &JetDd) -> JetDd {
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
        let mut c = [Dd::ZERO; 10];
        for (p, &(i1, j1)) in IJ.iter().enumerate() {
            if self.c[p].hi == 0.0 && self.c[p].lo == 0.0 {
                continue;
            }
            for (q, &(i2, j2)) in IJ.iter().enumerate() {
                if i1 + j1 + i2 + j2 > 3 {
                    continue;
                }
                let t = self.c[p].mul(o.c[q]);
                let slot = pos(i1 + i2, j1 + j2);
                c[slot] = c[slot].add(t);
            }
        }
        JetDd { c }
    }

    pub fn value(&self) -> Dd {
        self.c[0]
    }

    pub fn grad(&self) -> [Dd; 2] {
        [self.c[1], self.c[2]]
    }

    pub fn hess(&self) -> [Dd; 3] {
        [self.c[3].mul_f64(2.0), self.c[4], self.c[5].mul_f64(2.0)]
    }

    pub fn third(&self) -> [Dd; 4] {
        [
            self.c[6].mul_f64(6.0),
            self.c[7].mul_f64(2.0),
            self.c[8].mul_f64(2.0),
            self.c[9].mul_f64(6.0),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dd_arithmetic_is_exact_beyond_f64() {
        // (1 + 2^-40) * (1 - 2^-40) = 1 - 2^-80: the 2^-80 survives in dd
        let a = Dd::from_f64(1.0).add_f64(2f64.powi(-40));
        let b = Dd::from_f64(1.0).add_f64(-(2f64.powi(-40)));
        let p = a.mul(b);
        let expect_lo = -(2f64.powi(-80));
        assert_eq!(p.hi, 1.0);
        assert!((p.lo - expect_lo).abs() < 1e-40);
    }

    #[test]
    fn dd_division() {
        let a = Dd::from_f64(1.0);
        let b = Dd::from_f64(3.0);
        let q = a.div(b);
        // 1/3 in dd: hi is the f64 rounding, lo carries the remainder
        let back = q.mul(b);
        assert!((back.to_f64() - 1.0).abs() < 1e-30);
        assert!((back.hi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jet_dd_matches_f64_jet_on_cubic() {
        use crate::jet::Jet3;
        let (x0, y0) = (0.37, 0.21);
        let fx = Jet3::var_x(x0);
        let fy = Jet3::var_y(y0);
        let f = fx.mul(&fx).mul(&fy).add(&fy.mul(&fy).scale(-2.0));
        let gx = JetDd::linear(1.0, 0.0, 0.0, x0, y0);
        let gy = JetDd::linear(0.0, 1.0, 0.0, x0, y0);
        let g = gx.mul(&gx).mul(&gy).add(&gy.mul(&gy).scale(-2.0));
        for k in 0..10 {
            assert!((f.c[k] - g.c[k].to_f64()).abs() < 1e-14);
        }
    }
}
