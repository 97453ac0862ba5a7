//! Backup controller, implicit safe-set membership and robust affine CBF rows.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{saturate, ControlAffine, DynamicsError, Zoh};
use crate::scalar::Scalar;
use crate::sensitivity::{flow_with_sensitivity, SensitivityConfig, SensitivityError, SensitivityTrajectory};
use crate::setops::{interval_dot, Expr, Interval, IntervalBox, SetError};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("no trajectory points selected")]
    EmptySelection,
    #[error("selected index {index} beyond trajectory of {steps} steps")]
    IndexOutOfRange { index: usize, steps: usize },
    #[error("backup horizon {horizon} is not a whole number of {dt} s steps")]
    Horizon { horizon: f64, dt: f64 },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Extended class-K function `α(h) = λ h`.
pub fn alpha<T: Scalar>(lambda: T, h: T) -> T {
    lambda * h
}

/// Safe set `{h >= 0}`, backup set `{h_B >= 0}`, horizon and class-K gain.
#[derive(Clone, Debug)]
pub struct SafetySpec<T: Scalar> {
    pub h: Expr<T>,
    pub grad_h: Vec<Expr<T>>,
    pub h_backup: Expr<T>,
    pub grad_h_backup: Vec<Expr<T>>,
    /// Backup horizon `T` in seconds.
    pub horizon: T,
    /// `λ` in 1/s.
    pub alpha_gain: T,
}

impl<T: Scalar> SafetySpec<T> {
    pub fn new(h: Expr<T>, h_backup: Expr<T>, n: usize, horizon: T, alpha_gain: T) -> Result<Self, SetError> {
        Ok(Self {
            grad_h: h.gradient(n)?,
            grad_h_backup: h_backup.gradient(n)?,
            h,
            h_backup,
            horizon,
            alpha_gain,
        })
    }

    pub fn h(&self, x: &DVector<T>) -> T {
        self.h.eval_vec(x)
    }

    pub fn h_backup(&self, x: &DVector<T>) -> T {
        self.h_backup.eval_vec(x)
    }

    pub fn alpha(&self, h: T) -> T {
        alpha(self.alpha_gain, h)
    }

    /// Number of `dt` steps in the horizon.
    pub fn horizon_steps(&self, dt: T) -> Result<usize, BarrierError> {
        let ratio = self.horizon / dt;
        let steps = ratio.round();
        if steps < T::one() || (ratio - steps).abs() > T::lit(1e-6) * ratio {
            return Err(BarrierError::Horizon {
                horizon: self.horizon.to_f64_lossy(),
                dt: dt.to_f64_lossy(),
            });
        }
        Ok(steps.to_usize().unwrap_or(1))
    }

    fn expr(&self, kind: ConstraintKind) -> (&Expr<T>, &[Expr<T>]) {
        match kind {
            ConstraintKind::Safety => (&self.h, &self.grad_h),
            ConstraintKind::Backup => (&self.h_backup, &self.grad_h_backup),
        }
    }
}

/// Saturated linear feedback toward an equilibrium, used as the backup law
/// on top of a pre-feedback plant.
#[derive(Clone, Debug, PartialEq)]
pub struct BackupController<T: Scalar> {
    pub gain: DMatrix<T>,
    pub equilibrium: DVector<T>,
    pub u_max: DVector<T>,
}

impl<T: Scalar> BackupController<T> {
    pub fn new(gain: DMatrix<T>, equilibrium: DVector<T>, u_max: DVector<T>) -> Self {
        assert_eq!(gain.nrows(), u_max.len());
        assert_eq!(gain.ncols(), equilibrium.len());
        Self {
            gain,
            equilibrium,
            u_max,
        }
    }

    /// Zero outer input; all stabilization comes from the pre-feedback.
    pub fn passive(n: usize, u_max: DVector<T>) -> Self {
        Self::new(DMatrix::zeros(u_max.len(), n), DVector::zeros(n), u_max)
    }

    pub fn policy(&self, x: &DVector<T>) -> DVector<T> {
        saturate(&(&self.gain * (x - &self.equilibrium)), &self.u_max)
    }
}

/// `backup_policy(x) = sat(K_B (x - x_eq))`.
pub fn backup_policy<T: Scalar>(backup: &BackupController<T>, x: &DVector<T>) -> DVector<T> {
    backup.policy(x)
}

/// Everything needed to roll the backup flow out.
#[derive(Clone, Copy, Debug)]
pub struct BackupFlow<'a, T: Scalar, M: ?Sized> {
    pub model: &'a M,
    pub backup: &'a BackupController<T>,
    pub zoh: Zoh,
    pub sensitivity: SensitivityConfig,
}

impl<T: Scalar, M: ControlAffine<T> + ?Sized> BackupFlow<'_, T, M> {
    pub fn rollout(&self, x0: &DVector<T>, dt: T, steps: usize) -> Result<SensitivityTrajectory<T>, BarrierError> {
        Ok(flow_with_sensitivity(
            self.model,
            &self.zoh,
            x0,
            |x| self.backup.policy(x),
            dt,
            steps,
            &self.sensitivity,
        )?)
    }

    /// States only, without sensitivities.
    pub fn states(&self, x0: &DVector<T>, dt: T, steps: usize) -> Result<Vec<DVector<T>>, BarrierError> {
        let traj = self.zoh.simulate(self.model, x0, |_, x| self.backup.policy(x), dt, steps)?;
        Ok(traj.states)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership<T> {
    pub inside: bool,
    /// Minimum of `h` along the sampled backup flow and `h_B` at its end.
    pub margin: T,
    /// First sample where `h < 0`, if any.
    pub first_violation: Option<usize>,
}

/// Implicit-set membership of `x0` under the sampled backup flow.
pub fn membership<T: Scalar, M: ControlAffine<T> + ?Sized>(
    flow: &BackupFlow<'_, T, M>,
    x0: &DVector<T>,
    spec: &SafetySpec<T>,
    dt: T,
) -> Result<Membership<T>, BarrierError> {
    let steps = spec.horizon_steps(dt)?;
    let states = flow.states(x0, dt, steps)?;
    Ok(membership_of_states(&states, spec))
}

pub fn membership_of_states<T: Scalar>(states: &[DVector<T>], spec: &SafetySpec<T>) -> Membership<T> {
    let mut margin = T::INFINITY;
    let mut first_violation = None;
    for (i, x) in states.iter().enumerate() {
        let h = spec.h(x);
        if h < T::zero() && first_violation.is_none() {
            first_violation = Some(i);
        }
        margin = margin.min(h);
    }
    if let Some(last) = states.last() {
        margin = margin.min(spec.h_backup(last));
    }
    Membership {
        inside: margin >= T::zero(),
        margin,
        first_violation,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    /// Indices of the `k` samples with smallest `h`, ascending.
    pub points: Vec<usize>,
    /// Terminal index carrying the `h_B` constraint.
    pub terminal: usize,
}

/// Picks the `k` samples closest to the safe-set boundary.
pub fn select_points<T: Scalar>(traj: &SensitivityTrajectory<T>, spec: &SafetySpec<T>, k: usize) -> Selection {
    let states = &traj.base.states;
    let mut order: Vec<(T, usize)> = states.iter().enumerate().map(|(i, x)| (spec.h(x), i)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut points: Vec<usize> = order.into_iter().take(k.max(1)).map(|(_, i)| i).collect();
    points.sort_unstable();
    Selection {
        points,
        terminal: states.len() - 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// From `h` at a selected sample.
    Safety,
    /// From `h_B` at the end of the horizon.
    Backup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintTag {
    pub step: usize,
    pub kind: ConstraintKind,
}

/// One row `aᵀu + b >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineConstraint<T: Scalar> {
    pub a: DVector<T>,
    pub b: T,
    pub tag: ConstraintTag,
}

impl<T: Scalar> AffineConstraint<T> {
    pub fn value(&self, u: &DVector<T>) -> T {
        self.a.dot(u) + self.b
    }

    pub fn is_satisfied(&self, u: &DVector<T>) -> bool {
        self.value(u) >= T::zero()
    }

    pub fn is_finite(&self) -> bool {
        self.b.finite() && self.a.iter().all(|v| v.finite())
    }
}

/// Interval pieces of one constraint before affinization.
#[derive(Clone, Debug)]
pub struct ConstraintEnclosure<T: Scalar> {
    /// `∇h · Φ · f` over the initial set.
    pub drift: Interval<T>,
    /// `∇h · Φ · g_j` over the initial set, one per input.
    pub input: Vec<Interval<T>>,
    /// `α(h)` over the translated set.
    pub class_k: Interval<T>,
    pub tag: ConstraintTag,
}

impl<T: Scalar> ConstraintEnclosure<T> {
    /// `a = mid(C)`, `b = lo(D) + lo(A) - Σ rad(C_j) u_max_j`.
    pub fn affinize(&self, u_max: &DVector<T>) -> AffineConstraint<T> {
        let a = DVector::from_iterator(self.input.len(), self.input.iter().map(|c| c.mid()));
        let slack = self
            .input
            .iter()
            .zip(u_max.iter())
            .fold(T::zero(), |acc, (c, m)| acc + c.rad() * *m);
        AffineConstraint {
            a,
            b: self.drift.lo() + self.class_k.lo() - slack,
            tag: self.tag,
        }
    }
}

/// Interval enclosures for every selected sample, before affinization.
///
/// `delta_x` is the state uncertainty as an offset box around zero.
/// `initial_set` is the set of states the plant may occupy while the input is
/// held and only enters through `f` and `g`. The gradient and class-K terms at
/// sample `i` are evaluated on `φ_i(x0) ⊕ delta_x`.
pub fn constraint_enclosures<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    delta_x: &IntervalBox<T>,
    initial_set: &IntervalBox<T>,
    traj: &SensitivityTrajectory<T>,
    spec: &SafetySpec<T>,
    selection: &Selection,
) -> Result<Vec<ConstraintEnclosure<T>>, BarrierError> {
    if selection.points.is_empty() {
        return Err(BarrierError::EmptySelection);
    }
    let steps = traj.steps();
    let f = model.drift_enclosure(initial_set)?;
    let g = model.input_matrix_enclosure(initial_set)?;
    let tags = selection
        .points
        .iter()
        .map(|&step| ConstraintTag {
            step,
            kind: ConstraintKind::Safety,
        })
        .chain(std::iter::once(ConstraintTag {
            step: selection.terminal,
            kind: ConstraintKind::Backup,
        }));
    let mut out = Vec::with_capacity(selection.points.len() + 1);
    for tag in tags {
        if tag.step > steps {
            return Err(BarrierError::IndexOutOfRange { index: tag.step, steps });
        }
        let (h, grad) = spec.expr(tag.kind);
        let around = delta_x.translate(&traj.base.states[tag.step])?;
        let grad_box: Vec<Interval<T>> = grad
            .iter()
            .map(|e| e.eval_interval(&around))
            .collect::<Result<_, _>>()?;
        let phi = &traj.cumulative[tag.step];
        // interval row ∇h · Φ
        let row: Vec<Interval<T>> = (0..phi.ncols())
            .map(|j| {
                grad_box
                    .iter()
                    .enumerate()
                    .fold(Interval::point(T::zero()), |acc, (i, gi)| acc + *gi * phi[(i, j)])
            })
            .collect();
        let drift = interval_dot(&row, &f);
        let input = (0..g.ncols())
            .map(|j| {
                row.iter()
                    .enumerate()
                    .fold(Interval::point(T::zero()), |acc, (i, r)| acc + *r * g.get(i, j))
            })
            .collect();
        let class_k = h.eval_interval(&around)? * spec.alpha_gain;
        out.push(ConstraintEnclosure {
            drift,
            input,
            class_k,
            tag,
        });
    }
    Ok(out)
}

/// Robust affine CBF rows, ascending in step, with the `h_B` row last.
pub fn build_constraints<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    delta_x: &IntervalBox<T>,
    initial_set: &IntervalBox<T>,
    traj: &SensitivityTrajectory<T>,
    spec: &SafetySpec<T>,
    selection: &Selection,
) -> Result<Vec<AffineConstraint<T>>, BarrierError> {
    let u_max = model.input_bound();
    Ok(constraint_enclosures(model, delta_x, initial_set, traj, spec, selection)?
        .iter()
        .map(|e| e.affinize(&u_max))
        .collect())
}
