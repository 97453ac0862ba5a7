use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Interval, SetError};
use crate::scalar::Scalar;

/// Axis-aligned box `{x : lo <= x <= hi}`.
#[derive(Clone, PartialEq, Debug)]
pub struct IntervalBox<T: Scalar> {
    lo: DVector<T>,
    hi: DVector<T>,
}

impl<T: Scalar> IntervalBox<T> {
    pub fn new(lo: DVector<T>, hi: DVector<T>) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
            return Err(SetError::InvalidBounds {
                axis: i,
                lo: lo[i].to_f64_lossy(),
                hi: hi[i].to_f64_lossy(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: &DVector<T>) -> Self {
        Self {
            lo: x.clone(),
            hi: x.clone(),
        }
    }

    /// Box centered at the origin with the given per-axis radii.
    pub fn centered(radius: &DVector<T>) -> Self {
        let r = radius.map(|v| v.abs());
        Self { lo: -&r, hi: r }
    }

    pub fn from_center_radius(center: &DVector<T>, radius: &DVector<T>) -> Self {
        let r = radius.map(|v| v.abs());
        Self {
            lo: center - &r,
            hi: center + &r,
        }
    }

    pub fn from_intervals(items: &[Interval<T>]) -> Self {
        Self {
            lo: DVector::from_iterator(items.len(), items.iter().map(|i| i.lo())),
            hi: DVector::from_iterator(items.len(), items.iter().map(|i| i.hi())),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<T> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<T> {
        &self.hi
    }

    pub fn get(&self, i: usize) -> Interval<T> {
        Interval::new(self.lo[i], self.hi[i])
    }

    pub fn intervals(&self) -> Vec<Interval<T>> {
        (0..self.dim()).map(|i| self.get(i)).collect()
    }

    pub fn midpoint(&self) -> DVector<T> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.get(i).mid()))
    }

    pub fn radius(&self) -> DVector<T> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.get(i).rad()))
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|v| v.finite())
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Minkowski sum.
    pub fn sum(&self, other: &Self) -> Result<Self, SetError> {
        self.check_dim(other.dim())?;
        Ok(Self {
            lo: &self.lo + &other.lo,
            hi: &self.hi + &other.hi,
        })
    }

    pub fn translate(&self, offset: &DVector<T>) -> Result<Self, SetError> {
        self.check_dim(offset.len())?;
        Ok(Self {
            lo: &self.lo + offset,
            hi: &self.hi + offset,
        })
    }

    pub fn hull(&self, other: &Self) -> Result<Self, SetError> {
        self.check_dim(other.dim())?;
        Ok(Self {
            lo: self.lo.zip_map(&other.lo, |a, b| a.min(b)),
            hi: self.hi.zip_map(&other.hi, |a, b| a.max(b)),
        })
    }

    pub fn hull_point(&self, x: &DVector<T>) -> Result<Self, SetError> {
        self.hull(&Self::point(x))
    }

    /// Scales every radius by `factor` around the midpoint, never shrinking.
    pub fn inflate(&self, factor: T) -> Self {
        Self::from_intervals(&self.intervals().iter().map(|i| i.inflate(factor)).collect::<Vec<_>>())
    }

    /// Widens every axis by the matching entry of `margin` on both sides.
    pub fn pad(&self, margin: &DVector<T>) -> Self {
        let m = margin.map(|v| v.abs());
        Self {
            lo: &self.lo - &m,
            hi: &self.hi + &m,
        }
    }

    /// All `2^n` corners, enumerated in binary order (bit `i` selects `hi` on axis `i`).
    pub fn vertices(&self) -> impl Iterator<Item = DVector<T>> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }),
            )
        })
    }

    /// Uniform sample inside the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                let t = T::lit(rng.random::<f64>());
                let v = self.lo[i] + (self.hi[i] - self.lo[i]) * t;
                v.max(self.lo[i]).min(self.hi[i])
            }),
        )
    }

    fn check_dim(&self, other: usize) -> Result<(), SetError> {
        if other != self.dim() {
            return Err(SetError::DimensionMismatch {
                expected: self.dim(),
                found: other,
            });
        }
        Ok(())
    }
}

/// Box minkowski sum, `a ⊕ b`.
pub fn box_sum<T: Scalar>(a: &IntervalBox<T>, b: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
    a.sum(b)
}

/// Tightest axis-aligned box around the ellipsoid `{x : xᵀ P x <= level}`.
///
/// The half-width on axis `i` is `sqrt(level * (P⁻¹)ᵢᵢ)`.
pub fn ellipsoid_box<T: Scalar>(p: &DMatrix<T>, level: T) -> Result<IntervalBox<T>, SetError> {
    let inv = p.clone().try_inverse().ok_or(SetError::SingularShape)?;
    let r = DVector::from_iterator(
        p.nrows(),
        (0..p.nrows()).map(|i| (level.max(T::zero()) * inv[(i, i)].max(T::zero())).sqrt()),
    );
    Ok(IntervalBox::centered(&r))
}

/// Interval-valued matrix, used for enclosures of the input map `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMatrix<T: Scalar> {
    entries: DMatrix<Interval<T>>,
}

impl<T: Scalar> IntervalMatrix<T> {
    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Interval<T>) -> Self {
        Self {
            entries: DMatrix::from_fn(rows, cols, f),
        }
    }

    pub fn point(m: &DMatrix<T>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Interval::point(m[(i, j)]))
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Interval<T> {
        self.entries[(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.is_finite())
    }

    pub fn contains(&self, m: &DMatrix<T>) -> bool {
        m.shape() == self.entries.shape()
            && self.entries.iter().zip(m.iter()).all(|(e, v)| e.contains(*v))
    }
}

/// Row vector (point) times interval vector.
pub fn row_dot_box<T: Scalar>(row: &[T], x: &IntervalBox<T>) -> Interval<T> {
    row.iter()
        .enumerate()
        .fold(Interval::point(T::zero()), |acc, (i, r)| acc + x.get(i) * *r)
}

/// Interval row vector times interval vector.
pub fn interval_dot<T: Scalar>(row: &[Interval<T>], x: &IntervalBox<T>) -> Interval<T> {
    row.iter()
        .enumerate()
        .fold(Interval::point(T::zero()), |acc, (i, r)| acc + x.get(i) * *r)
}
