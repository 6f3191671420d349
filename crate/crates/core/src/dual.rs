//! Forward-mode dual numbers for exact directional derivatives of the
//! closed-form test maps.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub const fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    pub const fn cst(v: f64) -> Self {
        Self { v, d: 0.0 }
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        Self { v: r, d: 0.5 * self.d / r }
    }

    pub fn scale(self, s: f64) -> Self {
        Self { v: s * self.v, d: s * self.d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

/// Complex number over dual reals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CDual {
    pub re: Dual,
    pub im: Dual,
}

impl CDual {
    pub const fn new(re: Dual, im: Dual) -> Self {
        Self { re, im }
    }

    pub const fn cst(re: f64, im: f64) -> Self {
        Self { re: Dual::cst(re), im: Dual::cst(im) }
    }

    pub fn conj(self) -> Self {
        Self { re: self.re, im: -self.im }
    }

    pub fn norm_sq(self) -> Dual {
        self.re * self.re + self.im * self.im
    }

    pub fn powu(self, n: u32) -> Self {
        let mut out = CDual::cst(1.0, 0.0);
        for _ in 0..n {
            out = out * self;
        }
        out
    }
}

impl Add for CDual {
    type Output = CDual;
    fn add(self, o: CDual) -> CDual {
        CDual::new(self.re + o.re, self.im + o.im)
    }
}

impl Mul for CDual {
    type Output = CDual;
    fn mul(self, o: CDual) -> CDual {
        CDual::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}
