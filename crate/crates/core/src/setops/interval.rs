use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// Closed interval `[lo, hi]`.
///
/// No directed rounding is performed. Every operation is built from
/// monotone floating point primitives, so the floating point evaluation of an
/// expression at a point of the argument box still lands inside the computed
/// enclosure.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Interval<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Interval<T> {
    /// Panics when `lo > hi` or either bound is NaN.
    #[inline]
    pub fn new(lo: T, hi: T) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Self { lo, hi }
    }

    #[inline]
    pub fn point(v: T) -> Self {
        Self { lo: v, hi: v }
    }

    /// Symmetric interval `[-r, r]`.
    #[inline]
    pub fn symmetric(r: T) -> Self {
        Self::new(-r, r)
    }

    pub fn entire() -> Self {
        Self {
            lo: T::NEG_INFINITY,
            hi: T::INFINITY,
        }
    }

    #[inline]
    pub fn lo(&self) -> T {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> T {
        self.hi
    }

    #[inline]
    pub fn mid(&self) -> T {
        if self.lo == self.hi {
            return self.lo;
        }
        self.lo * T::lit(0.5) + self.hi * T::lit(0.5)
    }

    /// Radius, rounded up so that `[mid - rad, mid + rad]` covers the interval.
    #[inline]
    pub fn rad(&self) -> T {
        let m = self.mid();
        (m - self.lo).max(self.hi - m)
    }

    #[inline]
    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    #[inline]
    pub fn contains(&self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Self) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.finite() && self.hi.finite()
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Largest absolute value in the interval.
    pub fn mag(&self) -> T {
        self.lo.abs().max(self.hi.abs())
    }

    /// Grows the interval around its midpoint by `factor` (>= 1).
    pub fn inflate(&self, factor: T) -> Self {
        let m = self.mid();
        let r = self.rad() * factor;
        Self::new((m - r).min(self.lo), (m + r).max(self.hi))
    }

    /// Dependency-aware square: the result never contains negative values.
    pub fn square(&self) -> Self {
        if self.lo >= T::zero() {
            Self::new(self.lo * self.lo, self.hi * self.hi)
        } else if self.hi <= T::zero() {
            Self::new(self.hi * self.hi, self.lo * self.lo)
        } else {
            let m = self.mag();
            Self::new(T::zero(), m * m)
        }
    }

    pub fn powi(&self, k: i32) -> Self {
        match k {
            0 => Self::point(T::one()),
            1 => *self,
            2 => self.square(),
            _ if k < 0 => Self::point(T::one()) / self.powi(-k),
            _ if k % 2 == 0 => {
                let m = self.mag();
                let lo = if self.contains(T::zero()) {
                    T::zero()
                } else {
                    self.lo.abs().min(self.hi.abs()).powi(k)
                };
                Self::new(lo, m.powi(k))
            }
            _ => Self::new(self.lo.powi(k), self.hi.powi(k)),
        }
    }

    pub fn sqrt(&self) -> Option<Self> {
        if self.lo < T::zero() {
            return None;
        }
        Some(Self::new(self.lo.sqrt(), self.hi.sqrt()))
    }

    pub fn sin(&self) -> Self {
        // sin(x) = cos(x - pi/2); extrema at pi/2 + 2k pi (max) and -pi/2 + 2k pi (min)
        self.trig(|v| v.sin(), T::frac_pi_2(), -T::frac_pi_2())
    }

    pub fn cos(&self) -> Self {
        self.trig(|v| v.cos(), T::zero(), T::pi())
    }

    fn trig(&self, f: impl Fn(T) -> T, max_at: T, min_at: T) -> Self {
        if !self.is_finite() || self.width() >= T::two_pi() {
            return Self::new(-T::one(), T::one());
        }
        let a = f(self.lo);
        let b = f(self.hi);
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if hits_periodic(self.lo, self.hi, max_at) {
            hi = T::one();
        }
        if hits_periodic(self.lo, self.hi, min_at) {
            lo = -T::one();
        }
        Self::new(lo, hi)
    }
}

/// Whether `c + 2k*pi` lies in `[a, b]` for some integer `k`, erring towards yes.
fn hits_periodic<T: Scalar>(a: T, b: T, c: T) -> bool {
    let period = T::two_pi();
    let k = ((a - c) / period).ceil();
    let slack = T::lit(1e-12) * (T::one() + a.abs().max(b.abs()));
    let first = c + k * period;
    first <= b + slack || (first - period) >= a - slack
}

impl<T: Scalar> From<T> for Interval<T> {
    fn from(v: T) -> Self {
        Self::point(v)
    }
}

impl<T: Scalar> fmt::Debug for Interval<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl<T: Scalar> fmt::Display for Interval<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl<T: Scalar> Add for Interval<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self {
            lo: self.lo + rhs.lo,
            hi: self.hi + rhs.hi,
        }
    }
}

impl<T: Scalar> Sub for Interval<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self {
            lo: self.lo - rhs.hi,
            hi: self.hi - rhs.lo,
        }
    }
}

impl<T: Scalar> Neg for Interval<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl<T: Scalar> Mul for Interval<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.lo == self.hi && rhs.lo == rhs.hi {
            return Self::point(self.lo * rhs.lo);
        }
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        // 0 * inf produces NaN; treat as unbounded
        if p.iter().any(|v| v.nan()) {
            return Self::entire();
        }
        let mut lo = p[0];
        let mut hi = p[0];
        for v in &p[1..] {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        Self { lo, hi }
    }
}

impl<T: Scalar> Div for Interval<T> {
    type Output = Self;
    /// Division by an interval containing zero yields the whole real line.
    fn div(self, rhs: Self) -> Self {
        if rhs.contains(T::zero()) {
            return Self::entire();
        }
        let p = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        if p.iter().any(|v| v.nan()) {
            return Self::entire();
        }
        let mut lo = p[0];
        let mut hi = p[0];
        for v in &p[1..] {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        Self { lo, hi }
    }
}

impl<T: Scalar> Add<T> for Interval<T> {
    type Output = Self;
    fn add(self, rhs: T) -> Self {
        self + Self::point(rhs)
    }
}

impl<T: Scalar> Mul<T> for Interval<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        self * Self::point(rhs)
    }
}

/// Arithmetic shared by plain scalars and intervals, so that model equations
/// can be written once and evaluated either pointwise or over boxes.
pub trait Arith<T: Scalar>:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: T) -> Self;
    fn square(&self) -> Self;
    fn sine(&self) -> Self;
    fn cosine(&self) -> Self;
}

impl<T: Scalar> Arith<T> for T {
    #[inline]
    fn constant(v: T) -> Self {
        v
    }
    #[inline]
    fn square(&self) -> Self {
        *self * *self
    }
    #[inline]
    fn sine(&self) -> Self {
        self.sin()
    }
    #[inline]
    fn cosine(&self) -> Self {
        self.cos()
    }
}

impl<T: Scalar> Arith<T> for Interval<T> {
    #[inline]
    fn constant(v: T) -> Self {
        Self::point(v)
    }
    #[inline]
    fn square(&self) -> Self {
        Interval::square(self)
    }
    #[inline]
    fn sine(&self) -> Self {
        self.sin()
    }
    #[inline]
    fn cosine(&self) -> Self {
        self.cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> Interval<f64> {
        Interval::new(lo, hi)
    }

    #[test]
    fn endpoint_arithmetic() {
        assert_eq!(iv(1.0, 2.0) + iv(-0.5, 0.5), iv(0.5, 2.5));
        assert_eq!(iv(1.0, 2.0) - iv(-0.5, 0.5), iv(0.5, 2.5));
        assert_eq!(iv(-1.0, 2.0) * iv(-3.0, 1.0), iv(-6.0, 3.0));
        assert_eq!(-iv(1.0, 2.0), iv(-2.0, -1.0));
        assert_eq!(iv(2.0, 4.0) / iv(1.0, 2.0), iv(1.0, 4.0));
    }

    #[test]
    fn division_through_zero_is_unbounded() {
        let q = iv(1.0, 2.0) / iv(-1.0, 1.0);
        assert!(!q.is_finite());
    }

    #[test]
    fn square_is_dependency_aware() {
        let x = iv(-0.1, 0.1);
        assert_eq!(x.square(), iv(0.0, 0.010000000000000002));
        assert_eq!((x * x).lo(), -0.010000000000000002);
        assert_eq!(iv(-3.0, -2.0).square(), iv(4.0, 9.0));
    }

    #[test]
    fn powers() {
        assert_eq!(iv(-2.0, 1.0).powi(3), iv(-8.0, 1.0));
        assert_eq!(iv(-2.0, 1.0).powi(4), iv(0.0, 16.0));
        assert_eq!(iv(1.0, 2.0).powi(4), iv(1.0, 16.0));
        assert_eq!(iv(1.0, 2.0).powi(0), iv(1.0, 1.0));
    }

    #[test]
    fn trig_extrema() {
        let s = iv(0.0, 3.0).sin();
        assert_eq!(s.hi(), 1.0);
        assert!((s.lo() - 0.0).abs() < 1e-15);
        let c = iv(-0.2, 0.3).cos();
        assert_eq!(c.hi(), 1.0);
        assert!((c.lo() - 0.3f64.cos()).abs() < 1e-15);
        assert_eq!(iv(0.0, 7.0).cos(), iv(-1.0, 1.0));
        let c = iv(3.0, 3.5).cos();
        assert_eq!(c.lo(), -1.0);
    }

    #[test]
    fn mid_and_radius_cover() {
        let x = iv(0.1, 0.7);
        assert!(x.mid() - x.rad() <= x.lo());
        assert!(x.mid() + x.rad() >= x.hi());
    }

    #[test]
    fn single_precision_enclosure() {
        let x = Interval::<f32>::new(-0.5, 0.25);
        let y = x.square() * 4.0f32;
        assert_eq!(y, Interval::new(0.0, 1.0));
    }

    proptest! {
        #[test]
        fn inclusion_of_compound_expression(
            a in -3.0f64..3.0, w in 0.0f64..2.0, t in 0.0f64..1.0,
            b in -3.0f64..3.0, v in 0.0f64..2.0, s in 0.0f64..1.0,
        ) {
            let x = iv(a, a + w);
            let y = iv(b, b + v);
            let px = a + t * w;
            let py = b + s * v;
            let e = (x * y - x.square()).sin() + y.cos() * x;
            let p = (px * py - px * px).sin() + py.cos() * px;
            prop_assert!(e.contains(p), "{p} not in {e:?}");
        }

        #[test]
        fn enlarging_inputs_never_shrinks(a in -2.0f64..2.0, w in 0.0f64..1.0, g in 0.0f64..1.0) {
            let small = iv(a, a + w);
            let big = iv(a - g, a + w + g);
            let f = |x: Interval<f64>| x.square() * 3.0 - x.sin() * x.cos();
            prop_assert!(f(big).contains_interval(&f(small)));
        }
    }
}
