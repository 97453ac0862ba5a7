//! Flow sensitivities `∂φ/∂x` of sampled-data closed loops.
//!
//! Each held interval is differentiated by finite differences with the input
//! frozen at its nominal sample, and the per-step Jacobians are chained.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{saturate, ControlAffine, DynamicsError, Trajectory, Zoh};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("finite difference along axis {axis} is not finite")]
    NonFiniteColumn { axis: usize },
    #[error("jacobian {index} has shape {rows}x{cols}, expected {n}x{n}")]
    Dimension { index: usize, rows: usize, cols: usize, n: usize },
    #[error("no jacobians to compose")]
    Empty,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifferenceScheme {
    /// `2n` rollouts per step, second order accurate.
    Central,
    /// `n + 1` rollouts per step.
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    /// Perturbation is `epsilon * (1 + |x|_inf)`.
    pub epsilon: f64,
    pub scheme: DifferenceScheme,
    /// Cumulative Jacobians with `|det|` below this trigger a warning.
    pub det_floor: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            scheme: DifferenceScheme::Central,
            det_floor: 1e-12,
        }
    }
}

/// Jacobian of one held-input step `x ↦ φ_dt^{u_held}(x)`.
pub fn step_jacobian<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    zoh: &Zoh,
    x: &DVector<T>,
    u_held: &DVector<T>,
    dt: T,
    cfg: &SensitivityConfig,
) -> Result<DMatrix<T>, SensitivityError> {
    let n = x.len();
    let eps = T::lit(cfg.epsilon) * (T::one() + x.amax());
    let base = match cfg.scheme {
        DifferenceScheme::Forward => Some(zoh.step(model, x, u_held, dt)?),
        DifferenceScheme::Central => None,
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        xp[j] += eps;
        let fp = zoh.step(model, &xp, u_held, dt)?;
        let col = match &base {
            Some(f0) => (fp - f0) / eps,
            None => {
                let mut xm = x.clone();
                xm[j] -= eps;
                let fm = zoh.step(model, &xm, u_held, dt)?;
                (fp - fm) / (eps + eps)
            }
        };
        if col.iter().any(|v| !v.finite()) {
            return Err(SensitivityError::NonFiniteColumn { axis: j });
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Ordered product `J_{k-1} ... J_1 J_0`; the first step is applied first.
pub fn compose_sensitivities<T: Scalar>(step_jacobians: &[DMatrix<T>]) -> Result<DMatrix<T>, SensitivityError> {
    let first = step_jacobians.first().ok_or(SensitivityError::Empty)?;
    let n = first.nrows();
    let mut acc = DMatrix::identity(n, n);
    for (index, j) in step_jacobians.iter().enumerate() {
        if j.nrows() != n || j.ncols() != n {
            return Err(SensitivityError::Dimension {
                index,
                rows: j.nrows(),
                cols: j.ncols(),
                n,
            });
        }
        acc = j * acc;
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct SensitivityTrajectory<T: Scalar> {
    pub base: Trajectory<T>,
    pub step_jacobians: Vec<DMatrix<T>>,
    /// `cumulative[i] = ∂φ_{i dt} / ∂x0`.
    pub cumulative: Vec<DMatrix<T>>,
}

impl<T: Scalar> SensitivityTrajectory<T> {
    pub fn steps(&self) -> usize {
        self.base.steps()
    }
}

/// Rolls the closed loop forward and differentiates it along the way.
///
/// The policy is sampled once per step on the nominal state; that sample is
/// reused for every perturbed rollout of the step.
pub fn flow_with_sensitivity<T, M, P>(
    model: &M,
    zoh: &Zoh,
    x0: &DVector<T>,
    mut policy: P,
    dt: T,
    steps: usize,
    cfg: &SensitivityConfig,
) -> Result<SensitivityTrajectory<T>, SensitivityError>
where
    T: Scalar,
    M: ControlAffine<T> + ?Sized,
    P: FnMut(&DVector<T>) -> DVector<T>,
{
    let n = x0.len();
    let u_max = model.input_bound();
    let mut states = Vec::with_capacity(steps + 1);
    let mut held_inputs = Vec::with_capacity(steps);
    let mut step_jacobians = Vec::with_capacity(steps);
    let mut cumulative = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    cumulative.push(DMatrix::identity(n, n));
    let floor = T::lit(cfg.det_floor);
    let mut warned = false;
    for k in 0..steps {
        let x = &states[k];
        let u = saturate(&policy(x), &u_max);
        let next = zoh.step(model, x, &u, dt).map_err(|e| DynamicsError::Integration {
            step: k,
            source: Box::new(e),
        })?;
        let jac = step_jacobian(model, zoh, x, &u, dt, cfg)?;
        let cum = &jac * &cumulative[k];
        if !warned && cum.determinant().abs() < floor {
            warned = true;
            warn!("flow sensitivity nearly singular at step {}", k + 1);
        }
        step_jacobians.push(jac);
        cumulative.push(cum);
        held_inputs.push(u);
        states.push(next);
    }
    Ok(SensitivityTrajectory {
        base: Trajectory {
            dt,
            states,
            held_inputs,
        },
        step_jacobians,
        cumulative,
    })
}
