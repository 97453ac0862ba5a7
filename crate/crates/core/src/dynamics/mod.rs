//! Control-affine models `ẋ = f(x) + g(x) u`, a fixed-step RK4 integrator and
//! zero-order-hold simulation.

mod integrate;
mod segway;

pub use integrate::{simulate_zoh, step_zoh, Trajectory, Zoh};
pub use segway::{Segway, SegwayParams};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::setops::{IntervalBox, IntervalMatrix, SetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("model evaluation produced a non-finite value at state {state:?}")]
    NonFinite { state: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("integration failed at step {step}: {source}")]
    Integration {
        step: usize,
        #[source]
        source: Box<DynamicsError>,
    },
}

/// A control-affine system with box input bounds `-u_max <= u <= u_max`.
pub trait ControlAffine<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Per-axis bound `u_max` of the admissible input box.
    fn input_bound(&self) -> DVector<T>;

    /// Drift `f(x)`.
    fn drift(&self, x: &DVector<T>) -> DVector<T>;

    /// Input map `g(x)`, an `n x m` matrix.
    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T>;

    /// Enclosure of `f` over a box. Models without an interval extension
    /// cannot be used with set-valued routines.
    fn drift_enclosure(&self, _x: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
        Err(SetError::UnsupportedPrimitive("drift".into()))
    }

    /// Enclosure of `g` over a box.
    fn input_matrix_enclosure(&self, _x: &IntervalBox<T>) -> Result<IntervalMatrix<T>, SetError> {
        Err(SetError::UnsupportedPrimitive("input_matrix".into()))
    }

    /// `f(x) + g(x) u` without any checks.
    fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.drift(x) + self.input_matrix(x) * u
    }

    /// The input box `𝒰` as an interval box.
    fn input_box(&self) -> IntervalBox<T> {
        IntervalBox::centered(&self.input_bound())
    }
}

impl<T: Scalar, M: ControlAffine<T> + ?Sized> ControlAffine<T> for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn input_bound(&self) -> DVector<T> {
        (**self).input_bound()
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        (**self).drift(x)
    }
    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        (**self).input_matrix(x)
    }
    fn drift_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
        (**self).drift_enclosure(x)
    }
    fn input_matrix_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalMatrix<T>, SetError> {
        (**self).input_matrix_enclosure(x)
    }
    fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        (**self).vector_field(x, u)
    }
}

/// Evaluates `f(x) + g(x) u`, checking dimensions and finiteness.
///
/// Inputs outside the admissible box are evaluated as given; a warning is
/// logged and saturation is left to the caller.
pub fn eval_dynamics<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    check_dim(model.state_dim(), x.len())?;
    check_dim(model.input_dim(), u.len())?;
    let bound = model.input_bound();
    if u.iter().zip(bound.iter()).any(|(v, b)| v.abs() > *b) {
        log::warn!("input {:?} outside admissible box {:?}", u.as_slice(), bound.as_slice());
    }
    let dx = model.vector_field(x, u);
    if dx.iter().all(|v| v.finite()) {
        Ok(dx)
    } else {
        Err(non_finite(x))
    }
}

/// Clamps each input axis to `[-u_max, u_max]`.
pub fn saturate<T: Scalar>(u: &DVector<T>, u_max: &DVector<T>) -> DVector<T> {
    u.zip_map(u_max, |v, b| v.max(-b).min(b))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), DynamicsError> {
    if expected == found {
        Ok(())
    } else {
        Err(DynamicsError::Dimension { expected, found })
    }
}

pub(crate) fn non_finite<T: Scalar>(x: &DVector<T>) -> DynamicsError {
    DynamicsError::NonFinite {
        state: x.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

/// Linear model `ẋ = A x + B u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub u_max: DVector<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, u_max: DVector<T>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "A must be square");
        assert_eq!(a.nrows(), b.nrows(), "B must have n rows");
        assert_eq!(b.ncols(), u_max.len(), "u_max must have m entries");
        Self { a, b, u_max }
    }

    /// `ẋ = u` in one dimension.
    pub fn single_integrator(u_max: T) -> Self {
        Self::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, T::one()),
            DVector::from_element(1, u_max),
        )
    }

    /// Position/velocity double integrator.
    pub fn double_integrator(u_max: T) -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), T::zero(), T::zero()]),
            DMatrix::from_row_slice(2, 1, &[T::zero(), T::one()]),
            DVector::from_element(1, u_max),
        )
    }
}

impl<T: Scalar> ControlAffine<T> for LinearModel<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn input_bound(&self) -> DVector<T> {
        self.u_max.clone()
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x
    }
    fn input_matrix(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.b.clone()
    }
    fn drift_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
        let rows: Vec<_> = (0..self.a.nrows())
            .map(|i| {
                let row: Vec<T> = self.a.row(i).iter().copied().collect();
                crate::setops::row_dot_box(&row, x)
            })
            .collect();
        Ok(IntervalBox::from_intervals(&rows))
    }
    fn input_matrix_enclosure(&self, _x: &IntervalBox<T>) -> Result<IntervalMatrix<T>, SetError> {
        Ok(IntervalMatrix::point(&self.b))
    }
}

type DriftFn<T> = Box<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
type InputFn<T> = Box<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;

/// Model defined by plain closures. Point evaluation only.
pub struct FnModel<T: Scalar> {
    n: usize,
    m: usize,
    u_max: DVector<T>,
    f: DriftFn<T>,
    g: InputFn<T>,
}

impl<T: Scalar> FnModel<T> {
    pub fn new(
        n: usize,
        u_max: DVector<T>,
        f: impl Fn(&DVector<T>) -> DVector<T> + Send + Sync + 'static,
        g: impl Fn(&DVector<T>) -> DMatrix<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m: u_max.len(),
            u_max,
            f: Box::new(f),
            g: Box::new(g),
        }
    }
}

impl<T: Scalar> ControlAffine<T> for FnModel<T> {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn input_bound(&self) -> DVector<T> {
        self.u_max.clone()
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        (self.f)(x)
    }
    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.g)(x)
    }
}

/// Wraps a model with a continuous inner loop `u_total = u + K (x - x_eq)`.
///
/// The wrapped system is `ẋ = f(x) + g(x) K (x - x_eq) + g(x) u`; the outer
/// input `u` keeps the bounds of the inner model.
#[derive(Clone, Debug)]
pub struct PreFeedback<T: Scalar, M> {
    pub inner: M,
    pub gain: DMatrix<T>,
    pub equilibrium: DVector<T>,
}

impl<T: Scalar, M: ControlAffine<T>> PreFeedback<T, M> {
    pub fn new(inner: M, gain: DMatrix<T>, equilibrium: DVector<T>) -> Self {
        assert_eq!(gain.nrows(), inner.input_dim(), "gain must be m x n");
        assert_eq!(gain.ncols(), inner.state_dim(), "gain must be m x n");
        Self {
            inner,
            gain,
            equilibrium,
        }
    }

    /// Total input actually delivered to the inner model.
    pub fn total_input(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        u + &self.gain * (x - &self.equilibrium)
    }
}

impl<T: Scalar, M: ControlAffine<T>> ControlAffine<T> for PreFeedback<T, M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn input_bound(&self) -> DVector<T> {
        self.inner.input_bound()
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        self.inner.drift(x) + self.inner.input_matrix(x) * (&self.gain * (x - &self.equilibrium))
    }
    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        self.inner.input_matrix(x)
    }
    fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.inner.drift(x) + self.inner.input_matrix(x) * self.total_input(x, u)
    }
    fn drift_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
        let f = self.inner.drift_enclosure(x)?;
        let g = self.inner.input_matrix_enclosure(x)?;
        let dev = x.translate(&(-&self.equilibrium))?;
        let fb: Vec<_> = (0..self.gain.nrows())
            .map(|j| {
                let row: Vec<T> = self.gain.row(j).iter().copied().collect();
                crate::setops::row_dot_box(&row, &dev)
            })
            .collect();
        let items: Vec<_> = (0..f.dim())
            .map(|i| {
                fb.iter()
                    .enumerate()
                    .fold(f.get(i), |acc, (j, v)| acc + g.get(i, j) * *v)
            })
            .collect();
        Ok(IntervalBox::from_intervals(&items))
    }
    fn input_matrix_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalMatrix<T>, SetError> {
        self.inner.input_matrix_enclosure(x)
    }
}
