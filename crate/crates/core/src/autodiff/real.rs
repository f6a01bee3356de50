use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

/// Scalar arithmetic shared by plain `f64` and recorded [`Var`]s, so that a
/// formula written once can be evaluated cheaply or recorded for gradients.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living wherever `self` lives.
    fn lift(&self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn powi(self, n: i32) -> Self;
    fn recip(self) -> Self;
    fn abs(self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        Var::value(self)
    }
    fn lift(&self, c: f64) -> Self {
        self.constant(c)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        Var::powf(self, p)
    }
    fn powi(self, n: i32) -> Self {
        Var::powi(self, n)
    }
    fn recip(self) -> Self {
        Var::recip(self)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
}

/// Sum of a non-empty sequence.
pub fn sum<T: Real>(items: impl IntoIterator<Item = T>) -> T {
    let mut it = items.into_iter();
    let first = it.next().expect("sum of empty sequence");
    it.fold(first, |acc, x| acc + x)
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Dot product against constant coefficients.
pub fn dot_const<T: Real>(a: &[T], b: &[f64]) -> T {
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}
