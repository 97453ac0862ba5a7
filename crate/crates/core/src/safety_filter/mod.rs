//! QP safety filter around the backup-flow constraints, with input-delay compensation.

mod delay;
mod qp;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{build_constraints, membership_of_states, select_points, BackupFlow, SafetySpec};
use crate::dynamics::ControlAffine;
use crate::scalar::Scalar;
use crate::setops::{reachable_box_from, IntervalBox, ReachConfig};

pub use delay::{
    check_zero_input_startup, delay_steps, delayed_filter_step, predict_delayed_state, residual_inflation,
    DelayedOutput, InputBuffer, StartupCheck,
};
pub use qp::{
    certifies_infeasibility, kkt_report, solve_certified, solve_filter_qp, solve_filter_qp_warm, FilterProblem,
    KktReport, QpError, QpSettings, QpSolution, QpStatus,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Constraints at the sampled estimate only.
    Nominal,
    /// Constraints over the hold-interval reachable set of the uncertainty box.
    Robust,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub mode: ConstraintMode,
    /// Number of trajectory samples turned into constraints.
    pub points: usize,
    pub reach: ReachConfig,
    pub qp: QpSettings,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: ConstraintMode::Nominal,
            points: 10,
            reach: ReachConfig::default(),
            qp: QpSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpOutcome {
    Optimal,
    Infeasible,
    /// No QP was solved (outside the implicit set or a fault).
    Skipped,
}

/// Per-sample record of what the filter did.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics<T: Scalar> {
    /// Membership margin of the backup flow from the filtered state.
    pub membership_margin: T,
    /// `min aᵢᵀu + bᵢ` at the returned input; `+∞` without constraints.
    pub min_constraint_margin: T,
    pub constraints: usize,
    pub active: Vec<usize>,
    pub fallback: bool,
    pub status: QpOutcome,
    pub fault: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput<T: Scalar> {
    pub u: DVector<T>,
    pub diagnostics: Diagnostics<T>,
}

/// One filter instance per control loop; it owns the warm-start state.
pub struct SafetyFilter<'a, T: Scalar, M: ?Sized> {
    pub flow: BackupFlow<'a, T, M>,
    pub spec: &'a SafetySpec<T>,
    pub config: FilterConfig,
    warm: Vec<usize>,
}

impl<'a, T: Scalar, M: ControlAffine<T> + ?Sized> SafetyFilter<'a, T, M> {
    pub fn new(flow: BackupFlow<'a, T, M>, spec: &'a SafetySpec<T>, config: FilterConfig) -> Self {
        Self {
            flow,
            spec,
            config,
            warm: Vec::new(),
        }
    }

    pub fn backup_action(&self, x: &DVector<T>) -> DVector<T> {
        self.flow.backup.policy(x)
    }

    /// Filters `u_des` at the estimate `x_est` with uncertainty box `delta_x`
    /// (centered at the origin).
    ///
    /// Falls back to the backup action when `x_est` is outside the implicit
    /// safe set, when the QP is infeasible, or on any numerical fault.
    pub fn filter_step(
        &mut self,
        x_est: &DVector<T>,
        delta_x: &IntervalBox<T>,
        u_des: &DVector<T>,
        dt: T,
    ) -> FilterOutput<T> {
        match self.try_filter(x_est, delta_x, u_des, dt) {
            Ok(out) => out,
            Err(fault) => {
                warn!("safety filter fault, applying backup action: {fault}");
                self.warm.clear();
                self.fallback(x_est, T::NEG_INFINITY, 0, QpOutcome::Skipped, Some(fault))
            }
        }
    }

    fn fallback(
        &self,
        x: &DVector<T>,
        margin: T,
        constraints: usize,
        status: QpOutcome,
        fault: Option<String>,
    ) -> FilterOutput<T> {
        FilterOutput {
            u: self.backup_action(x),
            diagnostics: Diagnostics {
                membership_margin: margin,
                min_constraint_margin: T::NEG_INFINITY,
                constraints,
                active: Vec::new(),
                fallback: true,
                status,
                fault,
            },
        }
    }

    fn try_filter(
        &mut self,
        x_est: &DVector<T>,
        delta_x: &IntervalBox<T>,
        u_des: &DVector<T>,
        dt: T,
    ) -> Result<FilterOutput<T>, String> {
        let steps = self.spec.horizon_steps(dt).map_err(|e| e.to_string())?;
        let traj = self.flow.rollout(x_est, dt, steps).map_err(|e| e.to_string())?;
        let member = membership_of_states(&traj.base.states, self.spec);
        if !member.inside {
            return Ok(self.fallback(x_est, member.margin, 0, QpOutcome::Skipped, None));
        }
        let model = self.flow.model;
        let (offset, initial_set) = match self.config.mode {
            ConstraintMode::Nominal => (IntervalBox::point(&DVector::zeros(x_est.len())), IntervalBox::point(x_est)),
            ConstraintMode::Robust => {
                let start = delta_x.translate(x_est).map_err(|e| e.to_string())?;
                let reach = reachable_box_from(model, &start, dt, &model.input_box(), &self.config.reach)
                    .map_err(|e| e.to_string())?;
                (delta_x.clone(), reach)
            }
        };
        let selection = select_points(&traj, self.spec, self.config.points);
        let constraints = build_constraints(model, &offset, &initial_set, &traj, self.spec, &selection)
            .map_err(|e| e.to_string())?;
        if let Some(c) = constraints.iter().find(|c| !c.is_finite()) {
            return Err(format!("non-finite constraint at step {}", c.tag.step));
        }
        let count = constraints.len();
        let problem = FilterProblem {
            u_des: u_des.clone(),
            constraints,
            u_max: model.input_bound(),
        };
        let sol = solve_certified(&problem, &self.warm, &self.config.qp).map_err(|e| e.to_string())?;
        if !sol.is_optimal() {
            self.warm.clear();
            return Ok(self.fallback(x_est, member.margin, count, QpOutcome::Infeasible, None));
        }
        let min_margin = problem
            .constraints
            .iter()
            .map(|c| c.value(&sol.u))
            .fold(T::INFINITY, |a, b| a.min(b));
        self.warm = sol.active.clone();
        Ok(FilterOutput {
            u: sol.u,
            diagnostics: Diagnostics {
                membership_margin: member.margin,
                min_constraint_margin: min_margin,
                constraints: count,
                active: sol.active,
                fallback: false,
                status: QpOutcome::Optimal,
                fault: None,
            },
        })
    }
}
