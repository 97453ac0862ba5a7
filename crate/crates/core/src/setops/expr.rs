//! Small expression trees for scalar functions of the state.
//!
//! Expressions evaluate pointwise, over boxes, and differentiate
//! symbolically, so a barrier function and its gradient always agree.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DVector;

use super::{Interval, IntervalBox, SetError};
use crate::scalar::Scalar;

type PointFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

#[derive(Clone)]
pub enum Expr<T: Scalar> {
    Const(T),
    Var(usize),
    Add(Box<Expr<T>>, Box<Expr<T>>),
    Sub(Box<Expr<T>>, Box<Expr<T>>),
    Mul(Box<Expr<T>>, Box<Expr<T>>),
    Div(Box<Expr<T>>, Box<Expr<T>>),
    Neg(Box<Expr<T>>),
    /// Square with the dependency-aware interval extension.
    Square(Box<Expr<T>>),
    Powi(Box<Expr<T>>, i32),
    Sin(Box<Expr<T>>),
    Cos(Box<Expr<T>>),
    /// Point-only function without an interval extension or derivative.
    Opaque(String, PointFn<T>),
}

impl<T: Scalar> Expr<T> {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn constant(v: T) -> Self {
        Expr::Const(v)
    }

    pub fn opaque(name: &str, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Expr::Opaque(name.to_owned(), Arc::new(f))
    }

    pub fn square(self) -> Self {
        Expr::Square(Box::new(self))
    }

    pub fn powi(self, k: i32) -> Self {
        Expr::Powi(Box::new(self), k)
    }

    pub fn sin(self) -> Self {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Self {
        Expr::Cos(Box::new(self))
    }

    pub fn div(self, rhs: Self) -> Self {
        Expr::Div(Box::new(self), Box::new(rhs))
    }

    /// Quadratic form `c - (x - center)ᵀ P (x - center)`.
    pub fn quadratic_level(level: T, p: &nalgebra::DMatrix<T>, center: &DVector<T>) -> Self {
        let n = p.nrows();
        let d = |i: usize| Expr::var(i) - Expr::constant(center[i]);
        let mut acc = Expr::constant(level);
        for i in 0..n {
            if p[(i, i)] != T::zero() {
                acc = acc - Expr::constant(p[(i, i)]) * d(i).square();
            }
            for j in (i + 1)..n {
                let c = p[(i, j)] + p[(j, i)];
                if c != T::zero() {
                    acc = acc - Expr::constant(c) * d(i) * d(j);
                }
            }
        }
        acc
    }

    /// Largest variable index referenced, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Opaque(..) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.arity().max(b.arity())
            }
            Expr::Neg(a) | Expr::Square(a) | Expr::Powi(a, _) | Expr::Sin(a) | Expr::Cos(a) => {
                a.arity()
            }
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Neg(a) => -a.eval(x),
            Expr::Square(a) => {
                let v = a.eval(x);
                v * v
            }
            Expr::Powi(a, k) => a.eval(x).powi(*k),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Opaque(_, f) => f(x),
        }
    }

    pub fn eval_vec(&self, x: &DVector<T>) -> T {
        self.eval(x.as_slice())
    }

    /// Inclusion-isotone enclosure of the expression over `x`.
    pub fn eval_interval(&self, x: &IntervalBox<T>) -> Result<Interval<T>, SetError> {
        let v = match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(i) => {
                if *i >= x.dim() {
                    return Err(SetError::DimensionMismatch {
                        expected: i + 1,
                        found: x.dim(),
                    });
                }
                x.get(*i)
            }
            Expr::Add(a, b) => a.eval_interval(x)? + b.eval_interval(x)?,
            Expr::Sub(a, b) => a.eval_interval(x)? - b.eval_interval(x)?,
            Expr::Mul(a, b) => a.eval_interval(x)? * b.eval_interval(x)?,
            Expr::Div(a, b) => a.eval_interval(x)? / b.eval_interval(x)?,
            Expr::Neg(a) => -a.eval_interval(x)?,
            Expr::Square(a) => a.eval_interval(x)?.square(),
            Expr::Powi(a, k) => a.eval_interval(x)?.powi(*k),
            Expr::Sin(a) => a.eval_interval(x)?.sin(),
            Expr::Cos(a) => a.eval_interval(x)?.cos(),
            Expr::Opaque(name, _) => return Err(SetError::UnsupportedPrimitive(name.clone())),
        };
        Ok(v)
    }

    /// Symbolic partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Result<Self, SetError> {
        use Expr as E;
        let d = match self {
            E::Const(_) => E::Const(T::zero()),
            E::Var(j) => E::Const(if *j == i { T::one() } else { T::zero() }),
            E::Add(a, b) => a.diff(i)? + b.diff(i)?,
            E::Sub(a, b) => a.diff(i)? - b.diff(i)?,
            E::Mul(a, b) => a.diff(i)? * (**b).clone() + (**a).clone() * b.diff(i)?,
            E::Div(a, b) => {
                let num = a.diff(i)? * (**b).clone() - (**a).clone() * b.diff(i)?;
                num.div((**b).clone().square())
            }
            E::Neg(a) => -a.diff(i)?,
            E::Square(a) => E::Const(T::lit(2.0)) * (**a).clone() * a.diff(i)?,
            E::Powi(a, k) => match k {
                0 => E::Const(T::zero()),
                1 => a.diff(i)?,
                2 => E::Const(T::lit(2.0)) * (**a).clone() * a.diff(i)?,
                _ => E::Const(T::lit(*k as f64)) * (**a).clone().powi(k - 1) * a.diff(i)?,
            },
            E::Sin(a) => (**a).clone().cos() * a.diff(i)?,
            E::Cos(a) => -((**a).clone().sin()) * a.diff(i)?,
            E::Opaque(name, _) => return Err(SetError::UnsupportedPrimitive(name.clone())),
        };
        Ok(d)
    }

    /// Gradient expressions for variables `0..n`.
    pub fn gradient(&self, n: usize) -> Result<Vec<Self>, SetError> {
        (0..n).map(|i| self.diff(i)).collect()
    }

    fn as_const(&self) -> Option<T> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }
}

impl<T: Scalar> Add for Expr<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a + b),
            (Some(a), _) if a == T::zero() => rhs,
            (_, Some(b)) if b == T::zero() => self,
            _ => Expr::Add(Box::new(self), Box::new(rhs)),
        }
    }
}

impl<T: Scalar> Sub for Expr<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a - b),
            (Some(a), _) if a == T::zero() => -rhs,
            (_, Some(b)) if b == T::zero() => self,
            _ => Expr::Sub(Box::new(self), Box::new(rhs)),
        }
    }
}

impl<T: Scalar> Mul for Expr<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a * b),
            (Some(a), _) | (_, Some(a)) if a == T::zero() => Expr::Const(T::zero()),
            (Some(a), _) if a == T::one() => rhs,
            (_, Some(b)) if b == T::one() => self,
            _ => Expr::Mul(Box::new(self), Box::new(rhs)),
        }
    }
}

impl<T: Scalar> Neg for Expr<T> {
    type Output = Self;
    fn neg(self) -> Self {
        match self {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(a) => *a,
            other => Expr::Neg(Box::new(other)),
        }
    }
}

impl<T: Scalar> fmt::Debug for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Add(a, b) => write!(f, "({a:?} + {b:?})"),
            Expr::Sub(a, b) => write!(f, "({a:?} - {b:?})"),
            Expr::Mul(a, b) => write!(f, "{a:?}*{b:?}"),
            Expr::Div(a, b) => write!(f, "{a:?}/{b:?}"),
            Expr::Neg(a) => write!(f, "-{a:?}"),
            Expr::Square(a) => write!(f, "sq({a:?})"),
            Expr::Powi(a, k) => write!(f, "{a:?}^{k}"),
            Expr::Sin(a) => write!(f, "sin({a:?})"),
            Expr::Cos(a) => write!(f, "cos({a:?})"),
            Expr::Opaque(name, _) => write!(f, "{name}(..)"),
        }
    }
}

/// Enclosure of a scalar expression over a box.
pub fn interval_eval<T: Scalar>(f: &Expr<T>, x: &IntervalBox<T>) -> Result<Interval<T>, SetError> {
    f.eval_interval(x)
}

/// Componentwise enclosure of a vector of expressions.
pub fn interval_eval_vec<T: Scalar>(
    fs: &[Expr<T>],
    x: &IntervalBox<T>,
) -> Result<IntervalBox<T>, SetError> {
    let items = fs
        .iter()
        .map(|f| f.eval_interval(x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IntervalBox::from_intervals(&items))
}
