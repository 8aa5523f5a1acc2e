//! Scalar abstraction over plain `f64` and forward-mode dual numbers.
//!
//! Solvers, models, and density code are written once against [`Scalar`].
//! Instantiated with `f64` they compute values; instantiated with [`Dual`]
//! they additionally carry up to [`MAX_TANGENTS`] derivative lanes, which is
//! how both the direct method (differentiating the discrete solver recursion)
//! and continuous forward sensitivities are realized.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Number of tangent lanes carried by [`Dual`]. Enough for both bundled
/// models (7 unconstrained parameters each).
pub const MAX_TANGENTS: usize = 8;

const LN_2PI: f64 = 1.8378770664093453;

/// Arithmetic interface shared by `f64` and [`Dual`].
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    /// Total lanes: 1 for `f64`, `1 + MAX_TANGENTS` for [`Dual`].
    const LANES: usize;

    fn constant(x: f64) -> Self;
    fn value(self) -> f64;
    /// Lane 0 is the value; lanes `1..LANES` are tangents.
    fn lane(self, i: usize) -> f64;
    fn scale(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn all_finite(self) -> bool;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    const LANES: usize = 1;

    #[inline]
    fn constant(x: f64) -> Self {
        x
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn lane(self, _i: usize) -> f64 {
        self
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }

    #[inline]
    fn all_finite(self) -> bool {
        self.is_finite()
    }
}

/// Vector-mode forward dual number: a value plus `MAX_TANGENTS` tangents.
///
/// Unused lanes stay exactly zero through arithmetic, so a single fixed-width
/// type serves every parameter count up to the cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub dx: [f64; MAX_TANGENTS],
}

impl Dual {
    #[inline]
    pub fn new(re: f64) -> Self {
        Dual {
            re,
            dx: [0.0; MAX_TANGENTS],
        }
    }

    /// Value `re` with a unit tangent in lane `i` (an independent variable).
    #[inline]
    pub fn seeded(re: f64, i: usize) -> Self {
        let mut d = Dual::new(re);
        d.dx[i] = 1.0;
        d
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        let mut dx = self.dx;
        for (a, b) in dx.iter_mut().zip(rhs.dx.iter()) {
            *a += b;
        }
        Dual {
            re: self.re + rhs.re,
            dx,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        let mut dx = self.dx;
        for (a, b) in dx.iter_mut().zip(rhs.dx.iter()) {
            *a -= b;
        }
        Dual {
            re: self.re - rhs.re,
            dx,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let mut dx = [0.0; MAX_TANGENTS];
        for i in 0..MAX_TANGENTS {
            dx[i] = self.dx[i] * rhs.re + rhs.dx[i] * self.re;
        }
        Dual {
            re: self.re * rhs.re,
            dx,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut dx = [0.0; MAX_TANGENTS];
        for i in 0..MAX_TANGENTS {
            dx[i] = (self.dx[i] - re * rhs.dx[i]) * inv;
        }
        Dual { re, dx }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        let mut dx = self.dx;
        for a in dx.iter_mut() {
            *a = -*a;
        }
        Dual { re: -self.re, dx }
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, rhs: Dual) {
        *self = *self - rhs;
    }
}

impl Scalar for Dual {
    const LANES: usize = 1 + MAX_TANGENTS;

    #[inline]
    fn constant(x: f64) -> Self {
        Dual::new(x)
    }

    #[inline]
    fn value(self) -> f64 {
        self.re
    }

    #[inline]
    fn lane(self, i: usize) -> f64 {
        if i == 0 {
            self.re
        } else {
            self.dx[i - 1]
        }
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        let mut dx = self.dx;
        for a in dx.iter_mut() {
            *a *= c;
        }
        Dual {
            re: self.re * c,
            dx,
        }
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        let mut dx = self.dx;
        for a in dx.iter_mut() {
            *a *= e;
        }
        Dual { re: e, dx }
    }

    #[inline]
    fn ln(self) -> Self {
        let inv = 1.0 / self.re;
        let mut dx = self.dx;
        for a in dx.iter_mut() {
            *a *= inv;
        }
        Dual {
            re: self.re.ln(),
            dx,
        }
    }

    #[inline]
    fn all_finite(self) -> bool {
        self.re.is_finite() && self.dx.iter().all(|d| d.is_finite())
    }
}

/// log Normal(x | mu, sigma^2) with generic arguments.
pub fn normal_lpdf<S: Scalar>(x: S, mu: S, sigma: S) -> S {
    let z = (x - mu) / sigma;
    -(sigma.ln()) - S::constant(0.5 * LN_2PI) - z.square().scale(0.5)
}

/// log LogNormal(x | mu, sigma^2); `x` must be positive.
pub fn lognormal_lpdf<S: Scalar>(x: S, mu: S, sigma: S) -> S {
    let lx = x.ln();
    let z = (lx - mu) / sigma;
    -lx - sigma.ln() - S::constant(0.5 * LN_2PI) - z.square().scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        let x = Dual::seeded(3.0, 0);
        let y = Dual::seeded(5.0, 1);
        let p = x * y;
        assert_eq!(p.re, 15.0);
        assert_eq!(p.dx[0], 5.0);
        assert_eq!(p.dx[1], 3.0);
    }

    #[test]
    fn dual_exp_ln_chain() {
        let x = Dual::seeded(2.0, 0);
        let z = (x * x).ln(); // d/dx ln(x^2) = 2/x = 1
        assert!((z.re - (4.0f64).ln()).abs() < 1e-15);
        assert!((z.dx[0] - 1.0).abs() < 1e-15);

        let e = x.exp();
        assert!((e.dx[0] - 2.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn dual_division_quotient_rule() {
        let x = Dual::seeded(1.0, 0);
        let q = Dual::new(2.0) / (x * x + Dual::new(1.0)); // -4x/(x^2+1)^2 = -1 at x=1
        assert!((q.re - 1.0).abs() < 1e-15);
        assert!((q.dx[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn unused_lanes_stay_zero() {
        let x = Dual::seeded(1.5, 2);
        let y = ((x * x).exp() / x).ln();
        for i in 0..MAX_TANGENTS {
            if i != 2 {
                assert_eq!(y.dx[i], 0.0);
            }
        }
    }

    #[test]
    fn density_helpers_match_f64_closed_forms() {
        // standard normal at 0: -0.5 log(2 pi)
        let v = normal_lpdf(0.0, 0.0, 1.0);
        assert!((v + 0.5 * LN_2PI).abs() < 1e-15);
        // LogNormal density at its median x = e^mu: -mu - log sigma - 0.5 log 2 pi
        let v = lognormal_lpdf((-1.0f64).exp(), -1.0, 0.3);
        assert!((v - (1.0 - (0.3f64).ln() - 0.5 * LN_2PI)).abs() < 1e-12);
    }
}
