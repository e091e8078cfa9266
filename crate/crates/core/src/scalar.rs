//! Scalar types a Lagrangian can be evaluated over.
//!
//! Built-in families are written once against [`Real`] and evaluated at plain
//! floats for values, at [`HyperDual`] for exact first and second partials,
//! and at [`Jet2`] for the radial Taylor data used by the R-modification.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Field operations plus the handful of elementary functions the built-in
/// families need. Branching decisions read [`Real::re`].
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

macro_rules! impl_real_float {
    ($t:ty) => {
        impl Real for $t {
            fn from_f64(x: f64) -> Self {
                <$t as num_traits::NumCast>::from(x).expect("finite literal")
            }
            fn re(self) -> f64 {
                num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
            }
            fn sin(self) -> Self {
                num_traits::Float::sin(self)
            }
            fn cos(self) -> Self {
                num_traits::Float::cos(self)
            }
            fn exp(self) -> Self {
                num_traits::Float::exp(self)
            }
            fn ln(self) -> Self {
                num_traits::Float::ln(self)
            }
            fn sqrt(self) -> Self {
                num_traits::Float::sqrt(self)
            }
            fn powi(self, n: i32) -> Self {
                num_traits::Float::powi(self, n)
            }
        }
    };
}

impl_real_float!(f32);
impl_real_float!(f64);

/// Value and first two derivatives of an elementary function at a point.
fn elementary<S: Real>(kind: Elem, x: S) -> (S, S, S) {
    match kind {
        Elem::Sin => {
            let (s, c) = (x.sin(), x.cos());
            (s, c, -s)
        }
        Elem::Cos => {
            let (s, c) = (x.sin(), x.cos());
            (c, -s, -c)
        }
        Elem::Exp => {
            let e = x.exp();
            (e, e, e)
        }
        Elem::Ln => {
            let r = S::one() / x;
            (x.ln(), r, -(r * r))
        }
        Elem::Sqrt => {
            let s = x.sqrt();
            let d1 = S::from_f64(0.5) / s;
            (s, d1, -(d1 / (x + x)))
        }
        Elem::Powi(n) => {
            let f = x.powi(n);
            let d1 = if n == 0 { S::zero() } else { x.powi(n - 1).scale(n as f64) };
            let d2 = if n == 0 || n == 1 {
                S::zero()
            } else {
                x.powi(n - 2).scale((n * (n - 1)) as f64)
            };
            (f, d1, d2)
        }
        Elem::Recip => {
            let r = S::one() / x;
            (r, -(r * r), (r * r * r).scale(2.0))
        }
    }
}

#[derive(Clone, Copy)]
enum Elem {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Powi(i32),
    Recip,
}

/// Hyper-dual number `re + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂` with ε₁² = ε₂² = 0.
///
/// Seeding ε₁ on variable i and ε₂ on variable j yields ∂ᵢf in `e1`, ∂ⱼf in
/// `e2` and ∂ᵢ∂ⱼf in `e12`, all free of truncation error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual<S> {
    pub re: S,
    pub e1: S,
    pub e2: S,
    pub e12: S,
}

impl<S: Real> HyperDual<S> {
    pub fn constant(re: S) -> Self {
        Self { re, e1: S::zero(), e2: S::zero(), e12: S::zero() }
    }

    pub fn seeded(re: S, e1: bool, e2: bool) -> Self {
        let pick = |b: bool| if b { S::one() } else { S::zero() };
        Self { re, e1: pick(e1), e2: pick(e2), e12: S::zero() }
    }

    fn chain(self, kind: Elem) -> Self {
        let (f, d1, d2) = elementary(kind, self.re);
        Self {
            re: f,
            e1: d1 * self.e1,
            e2: d1 * self.e2,
            e12: d1 * self.e12 + d2 * self.e1 * self.e2,
        }
    }
}

impl<S: Real> Add for HyperDual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, e1: self.e1 + o.e1, e2: self.e2 + o.e2, e12: self.e12 + o.e12 }
    }
}

impl<S: Real> Sub for HyperDual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, e1: self.e1 - o.e1, e2: self.e2 - o.e2, e12: self.e12 - o.e12 }
    }
}

impl<S: Real> Mul for HyperDual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl<S: Real> Div for HyperDual<S> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.chain(Elem::Recip)
    }
}

impl<S: Real> Neg for HyperDual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { re: -self.re, e1: -self.e1, e2: -self.e2, e12: -self.e12 }
    }
}

impl<S: Real> AddAssign for HyperDual<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Real> Real for HyperDual<S> {
    fn from_f64(x: f64) -> Self {
        Self::constant(S::from_f64(x))
    }
    fn re(self) -> f64 {
        self.re.re()
    }
    fn sin(self) -> Self {
        self.chain(Elem::Sin)
    }
    fn cos(self) -> Self {
        self.chain(Elem::Cos)
    }
    fn exp(self) -> Self {
        self.chain(Elem::Exp)
    }
    fn ln(self) -> Self {
        self.chain(Elem::Ln)
    }
    fn sqrt(self) -> Self {
        self.chain(Elem::Sqrt)
    }
    fn powi(self, n: i32) -> Self {
        self.chain(Elem::Powi(n))
    }
}

/// Truncated Taylor polynomial of degree two in one variable:
/// `v + d1·h + ½·d2·h²`, so `d1` and `d2` are the first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<S> {
    pub v: S,
    pub d1: S,
    pub d2: S,
}

impl<S: Real> Jet2<S> {
    pub fn constant(v: S) -> Self {
        Self { v, d1: S::zero(), d2: S::zero() }
    }

    /// The independent variable itself, expanded around `v`.
    pub fn variable(v: S) -> Self {
        Self { v, d1: S::one(), d2: S::zero() }
    }

    fn chain(self, kind: Elem) -> Self {
        let (f, d1, d2) = elementary(kind, self.v);
        Self { v: f, d1: d1 * self.d1, d2: d2 * self.d1 * self.d1 + d1 * self.d2 }
    }
}

impl<S: Real> Add for Jet2<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl<S: Real> Sub for Jet2<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl<S: Real> Mul for Jet2<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.v * o.d1 + self.d1 * o.v,
            d2: self.v * o.d2 + (self.d1 * o.d1).scale(2.0) + self.d2 * o.v,
        }
    }
}

impl<S: Real> Div for Jet2<S> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.chain(Elem::Recip)
    }
}

impl<S: Real> Neg for Jet2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

impl<S: Real> AddAssign for Jet2<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Real> Real for Jet2<S> {
    fn from_f64(x: f64) -> Self {
        Self::constant(S::from_f64(x))
    }
    fn re(self) -> f64 {
        self.v.re()
    }
    fn sin(self) -> Self {
        self.chain(Elem::Sin)
    }
    fn cos(self) -> Self {
        self.chain(Elem::Cos)
    }
    fn exp(self) -> Self {
        self.chain(Elem::Exp)
    }
    fn ln(self) -> Self {
        self.chain(Elem::Ln)
    }
    fn sqrt(self) -> Self {
        self.chain(Elem::Sqrt)
    }
    fn powi(self, n: i32) -> Self {
        self.chain(Elem::Powi(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f<S: Real>(x: S, y: S) -> S {
        (x * y).sin() + x.powi(3) / (S::one() + y * y).sqrt() + (x - y).exp().ln() * y.cos()
    }

    fn central(g: impl Fn(f64, f64) -> f64, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
        let h = 1e-5;
        (g(x + h * dx, y + h * dy) - g(x - h * dx, y - h * dy)) / (2.0 * h)
    }

    #[test]
    fn hyperdual_mixed_partial() {
        let (x, y) = (0.3, -0.7);
        let hx = HyperDual::seeded(x, true, false);
        let hy = HyperDual::seeded(y, false, true);
        let r = f(hx, hy);
        let fxy = |x: f64, y: f64| central(|a, b| f(a, b), x, y, 1.0, 0.0) + 0.0 * y;
        let mixed = central(fxy, x, y, 0.0, 1.0);
        assert!((r.re - f(x, y)).abs() < 1e-15);
        assert!((r.e1 - central(|a, b| f(a, b), x, y, 1.0, 0.0)).abs() < 1e-8);
        assert!((r.e2 - central(|a, b| f(a, b), x, y, 0.0, 1.0)).abs() < 1e-8);
        assert!((r.e12 - mixed).abs() < 1e-5);
    }

    #[test]
    fn jet_matches_second_derivative() {
        let g = |x: f64| f(x, 0.4);
        let j = f(Jet2::variable(1.1), Jet2::constant(0.4));
        let h = 1e-4;
        let d2 = (g(1.1 + h) - 2.0 * g(1.1) + g(1.1 - h)) / (h * h);
        assert!((j.d2 - d2).abs() < 1e-5);
        assert!((j.d1 - (g(1.1 + 1e-6) - g(1.1 - 1e-6)) / 2e-6).abs() < 1e-8);
    }

    #[test]
    fn single_precision_evaluates() {
        let a = f(0.3f32, -0.7f32) as f64;
        assert!((a - f(0.3f64, -0.7f64)).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn nested_jet_of_hyperdual_agrees(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            // d/dx of the jet's first coefficient equals the hyper-dual mixed partial route.
            let j = f(Jet2::variable(HyperDual::seeded(x, true, true)), Jet2::constant(HyperDual::constant(y)));
            let direct = f(HyperDual::seeded(x, true, true), HyperDual::constant(y));
            prop_assert!((j.v.re - direct.re).abs() < 1e-14);
            prop_assert!((j.d1.re - direct.e1).abs() < 1e-12);
            prop_assert!((j.d2.re - direct.e12).abs() < 1e-10);
        }
    }
}
