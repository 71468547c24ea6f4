//! Forward-mode dual numbers, nestable for second derivatives.
//!
//! `Dual<f64>` carries one directional derivative; `Dual<Dual<f64>>` carries a
//! mixed second derivative. Metric components are evaluated generically over
//! [`Scalar`], so the same expression tree produces values, gradients, and
//! Hessians without finite differencing.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic closure required to evaluate expression trees.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal value, with all derivative parts stripped.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, k: i32) -> Self;
    fn powf_const(self, p: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
    fn powf_const(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

/// `re + eps·d` with `eps² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn constant(x: f64) -> Self {
        Dual {
            re: T::from_f64(x),
            eps: T::from_f64(0.0),
        }
    }

    /// Seed for differentiating with respect to this variable.
    pub fn variable(x: T) -> Self {
        Dual {
            re: x,
            eps: T::from_f64(1.0),
        }
    }

    pub fn lift(x: T) -> Self {
        Dual {
            re: x,
            eps: T::from_f64(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual {
            re: self.re + rhs.re,
            eps: self.eps + rhs.eps,
        }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual {
            re: self.re - rhs.re,
            eps: self.eps - rhs.eps,
        }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual {
            re: self.re * rhs.re,
            eps: self.re * rhs.eps + self.eps * rhs.re,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Dual {
            re: q,
            eps: (self.eps - q * rhs.eps) / rhs.re,
        }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual {
            re: -self.re,
            eps: -self.eps,
        }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        Dual {
            re: self.re.sin(),
            eps: self.eps * self.re.cos(),
        }
    }
    fn cos(self) -> Self {
        Dual {
            re: self.re.cos(),
            eps: -(self.eps * self.re.sin()),
        }
    }
    fn sinh(self) -> Self {
        Dual {
            re: self.re.sinh(),
            eps: self.eps * self.re.cosh(),
        }
    }
    fn cosh(self) -> Self {
        Dual {
            re: self.re.cosh(),
            eps: self.eps * self.re.sinh(),
        }
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual {
            re: e,
            eps: self.eps * e,
        }
    }
    fn ln(self) -> Self {
        Dual {
            re: self.re.ln(),
            eps: self.eps / self.re,
        }
    }
    fn powi(self, k: i32) -> Self {
        if k == 0 {
            return Dual::constant(1.0);
        }
        Dual {
            re: self.re.powi(k),
            eps: self.eps * T::from_f64(k as f64) * self.re.powi(k - 1),
        }
    }
    fn powf_const(self, p: f64) -> Self {
        Dual {
            re: self.re.powf_const(p),
            eps: self.eps * T::from_f64(p) * self.re.powf_const(p - 1.0),
        }
    }
}
