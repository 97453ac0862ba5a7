//! Segway closed-loop scenarios: configuration, the simulation driver, CSV and
//! SVG output, and the sampling-rate and delay experiment grid.

mod config;
mod grid;
mod io;
mod plot;

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{BackupController, BackupFlow, SafetySpec};
use crate::dynamics::{saturate, ControlAffine, DynamicsError, PreFeedback, Segway, Zoh};
use crate::estimation::{
    capped_uncertainty_box, ekf_predict, ekf_predict_map, ekf_update, EkfState, SensorModel,
};
use crate::safety_filter::{
    check_zero_input_startup, delay_steps, delayed_filter_step, residual_inflation, ConstraintMode, FilterConfig,
    InputBuffer, QpOutcome, QpSettings, SafetyFilter,
};
use crate::setops::{Expr, IntervalBox, SetError};
use crate::synthesis::{linearize_at_vertices, synthesize_gain, CertificateFile, GainCertificate, SynthesisError};

pub use config::{
    BackupConfig, DesiredConfig, HarnessConfig, SafetyConfig, ScenarioConfig, SynthesisSection, Variant,
    DEFAULT_CONFIG,
};
pub use grid::{canonical_grid, run_grid, verdict_table, write_verdicts, GridEntry, GridRow};
pub use io::{emit_csv, emit_summary, read_csv, CSV_COLUMNS};
pub use plot::{emit_overlay, emit_plots};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("plant integration failed at t = {t}: {source}")]
    Plant { t: f64, source: DynamicsError },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("csv error: {0}")]
    Csv(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type SegwayModel = PreFeedback<f64, Segway<f64>>;

/// The Segway with its certified pre-feedback and the safety functions built from it.
pub struct SegwaySystem {
    /// Filter model: the Segway with the pre-feedback acting continuously.
    pub model: SegwayModel,
    pub spec: SafetySpec<f64>,
    pub backup: BackupController<f64>,
    pub certificate: GainCertificate,
    /// `ε_B`, the level of the backup set `xᵀPx ≤ ε_B`.
    pub backup_level: f64,
}

/// `h(x) = 1 - (p / limit)²`.
pub fn position_barrier(limit: f64) -> Expr<f64> {
    Expr::constant(1.0) - Expr::constant(1.0 / (limit * limit)) * Expr::var(0).square()
}

/// Largest `c` with `{xᵀPx ≤ c}` inside both the availability set and the
/// linearization box.
pub fn backup_level_bound(cert: &GainCertificate, half_widths: &[f64]) -> Result<f64, HarnessError> {
    let pinv = cert.p.clone().try_inverse().ok_or(SynthesisError::Singular)?;
    let fit = half_widths
        .iter()
        .enumerate()
        .map(|(i, w)| w * w / pinv[(i, i)])
        .fold(f64::INFINITY, f64::min);
    Ok(fit.min(cert.rho * cert.rho))
}

/// Synthesizes (or loads) the pre-feedback gain and assembles the model and safety functions.
pub fn build_system(cfg: &HarnessConfig) -> Result<SegwaySystem, HarnessError> {
    let segway = Segway::new(cfg.segway.clone());
    let u_max = segway.input_bound();
    let certificate = match &cfg.backup.certificate {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let file: CertificateFile = serde_json::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
            GainCertificate::from_file(&file)?
        }
        None => synthesize_segway_gain(cfg)?,
    };
    let n = 4;
    let level = cfg.backup.level_fraction * backup_level_bound(&certificate, &cfg.synthesis.half_widths)?;
    let spec = SafetySpec::new(
        position_barrier(cfg.safety.position_limit),
        Expr::quadratic_level(level, &certificate.p, &DVector::zeros(n)),
        n,
        cfg.safety.horizon,
        cfg.safety.alpha_gain,
    )?;
    let model = PreFeedback::new(segway, certificate.k.clone(), DVector::zeros(n));
    Ok(SegwaySystem {
        model,
        spec,
        backup: BackupController::passive(n, u_max),
        certificate,
        backup_level: level,
    })
}

/// Certified gain for the Segway linearized over the `[synthesis]` box.
pub fn synthesize_segway_gain(cfg: &HarnessConfig) -> Result<GainCertificate, HarnessError> {
    let segway = Segway::<f64>::new(cfg.segway.clone());
    let w = DVector::from_column_slice(&cfg.synthesis.half_widths);
    let bx = IntervalBox::from_center_radius(&DVector::zeros(4), &w);
    let family = linearize_at_vertices(&segway, &bx)?;
    Ok(synthesize_gain(&family, &segway.input_bound(), &cfg.synthesis.solver())?)
}

/// Desired outer input `-K x_ref + kp (p - p_ref) + kd ṗ`; with the
/// pre-feedback `K x` added the upright state at `p_ref` is the rest point.
pub fn desired_input(cfg: &DesiredConfig, gain: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut x_ref = DVector::zeros(x.len());
    x_ref[0] = cfg.setpoint;
    (-(gain * x_ref)).map(|v| v + cfg.kp * (x[0] - cfg.setpoint) + cfg.kd * x[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Safe,
    Unsafe,
}

/// One controller sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: f64,
    pub state: DVector<f64>,
    pub estimate: DVector<f64>,
    /// Radii of the uncertainty box handed to the filter.
    pub delta_radius: DVector<f64>,
    pub u_des: DVector<f64>,
    /// Filter output at this sample.
    pub u_command: DVector<f64>,
    /// Input the plant applies at this instant (the command when there is no delay).
    pub u_applied: DVector<f64>,
    pub h: f64,
    pub membership_margin: f64,
    pub min_constraint_margin: f64,
    pub fallback: bool,
    pub status: QpOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Minimum of `h` over the records.
    pub min_h: f64,
    /// Minimum of `h` over every plant substep.
    pub min_h_continuous: f64,
    pub max_abs_position: f64,
    pub verdict: Verdict,
    pub fallbacks: usize,
    pub faults: usize,
    /// Zero-input start check for delay-aware runs.
    pub startup_ok: Option<bool>,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub scenario: ScenarioConfig,
    pub records: Vec<Record>,
    pub summary: Summary,
}

/// Runs `cfg.scenario` on a freshly built system.
pub fn simulate(cfg: &HarnessConfig) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let system = build_system(cfg)?;
    run_scenario(cfg, &system)
}

fn noiseless_box(n: usize) -> IntervalBox<f64> {
    IntervalBox::point(&DVector::zeros(n))
}

/// Closed-loop simulation of one scenario.
///
/// The plant integrates the bare Segway with RK4 at `plant_substeps` per
/// controller period. At every sample the controller measures, updates the
/// estimate, filters the desired input and computes the pre-feedback `K x̂`;
/// the plant holds `u + K x̂` until the next sample, with `u` delayed by
/// `delay` (a whole number of substeps).
pub fn run_scenario(cfg: &HarnessConfig, system: &SegwaySystem) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let sc = &cfg.scenario;
    let model = &system.model;
    let n = model.state_dim();
    let m = model.input_dim();
    let dt = sc.dt();
    let steps = sc.steps();
    let h_sub = dt / sc.plant_substeps as f64;
    let plant_zoh = Zoh::new(1);

    let est_cfg = &cfg.estimation;
    let mut sensor = SensorModel::selecting(
        &est_cfg.channels,
        n,
        DVector::from_column_slice(&est_cfg.noise_std),
        sc.seed,
    );
    let q_d = DMatrix::from_diagonal(&DVector::from_column_slice(&est_cfg.process_noise));
    let caps = DVector::from_column_slice(&est_cfg.caps);
    let mut x = DVector::from_column_slice(&sc.initial_state);
    let mut est = EkfState::new(
        x.clone(),
        DMatrix::from_diagonal(&DVector::from_iterator(n, est_cfg.initial_std.iter().map(|s| s * s))),
    );

    let flow = BackupFlow {
        model,
        backup: &system.backup,
        zoh: Zoh::new(cfg.backup.substeps),
        sensitivity: cfg.sensitivity,
    };
    let mode = match sc.variant {
        Variant::Robust | Variant::DelayAware => ConstraintMode::Robust,
        _ => ConstraintMode::Nominal,
    };
    let mut filter = SafetyFilter::new(
        flow,
        &system.spec,
        FilterConfig {
            mode,
            points: cfg.safety.points,
            reach: cfg.reach,
            qp: QpSettings::default(),
        },
    );

    let (ctrl_delay, residual) = delay_steps(sc.delay, dt);
    let mut ctrl_buffer = InputBuffer::new(ctrl_delay, m);
    let mut plant_queue: VecDeque<DVector<f64>> = (0..sc.delay_substeps()).map(|_| DVector::zeros(m)).collect();

    let startup_ok = if sc.variant == Variant::DelayAware {
        let radius = est.covariance.diagonal().map(|v| est_cfg.confidence * v.sqrt());
        let initial = IntervalBox::from_center_radius(&x, &if sc.noise { radius } else { DVector::zeros(n) });
        match check_zero_input_startup(&filter, &initial, ctrl_delay, dt, 64, sc.seed) {
            Ok(c) => {
                if !c.passed() {
                    warn!("zero-input start check failed (margin {})", c.worst.margin);
                }
                Some(c.passed())
            }
            Err(e) => {
                warn!("zero-input start check errored: {e}");
                Some(false)
            }
        }
    } else {
        None
    };

    let mut records = Vec::with_capacity(steps + 1);
    let mut min_h_cont = system.spec.h(&x);
    let mut max_p = x[0].abs();
    let mut faults = 0;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (x_est, delta) = if sc.noise {
            let z = sensor.measure(&x);
            match ekf_update(&est, &z, &sensor) {
                Ok(e) => est = e,
                Err(e) => {
                    faults += 1;
                    warn!("estimator update failed at t = {t}: {e}");
                }
            }
            (est.mean.clone(), capped_uncertainty_box(&est, est_cfg.confidence, &caps))
        } else {
            (x.clone(), noiseless_box(n))
        };
        let u_des = desired_input(&cfg.desired, &system.certificate.k, &x_est);

        let (u_cmd, diag, used_delta) = match sc.variant {
            Variant::Unfiltered => (saturate(&u_des, &model.input_bound()), None, noiseless_box(n)),
            Variant::Nominal => {
                let out = filter.filter_step(&x_est, &noiseless_box(n), &u_des, dt);
                (out.u, Some(out.diagnostics), noiseless_box(n))
            }
            Variant::Robust => {
                let out = filter.filter_step(&x_est, &delta, &u_des, dt);
                (out.u, Some(out.diagnostics), delta)
            }
            Variant::DelayAware => {
                let pred_delta = if sc.noise {
                    let inputs: Vec<DVector<f64>> = ctrl_buffer.iter().cloned().collect();
                    let mut acc = est.clone();
                    for u in &inputs {
                        match ekf_predict(model, &flow_zoh(cfg), &acc, u, dt, &q_d, &cfg.sensitivity) {
                            Ok(e) => acc = e,
                            Err(e) => {
                                faults += 1;
                                warn!("covariance prediction failed at t = {t}: {e}");
                                break;
                            }
                        }
                    }
                    capped_uncertainty_box(&acc, est_cfg.confidence, &caps)
                } else {
                    noiseless_box(n)
                };
                let margin = match residual_inflation(model, &x_est, residual, &cfg.reach) {
                    Ok(b) => b.hi().clone(),
                    Err(e) => {
                        faults += 1;
                        warn!("residual inflation failed at t = {t}: {e}");
                        DVector::zeros(n)
                    }
                };
                let widened = pred_delta.pad(&margin);
                let out = delayed_filter_step(&mut filter, &x_est, &mut ctrl_buffer, &pred_delta, &margin, &u_des, dt);
                (out.output.u, Some(out.output.diagnostics), widened)
            }
        };
        let pre_feedback = &model.gain * (&x_est - &model.equilibrium);
        let u_applied = plant_queue.front().cloned().unwrap_or_else(|| u_cmd.clone());
        let (membership_margin, min_margin, fallback, status) = match &diag {
            Some(d) => {
                if d.fault.is_some() {
                    faults += 1;
                }
                (d.membership_margin, d.min_constraint_margin, d.fallback, d.status)
            }
            None => (f64::INFINITY, f64::INFINITY, false, QpOutcome::Skipped),
        };
        records.push(Record {
            t,
            state: x.clone(),
            estimate: x_est,
            delta_radius: used_delta.hi().clone(),
            u_des,
            u_command: u_cmd.clone(),
            u_applied,
            h: system.spec.h(&x),
            membership_margin,
            min_constraint_margin: min_margin,
            fallback,
            status,
        });
        if k == steps {
            break;
        }

        let mut schedule = Vec::with_capacity(sc.plant_substeps);
        for _ in 0..sc.plant_substeps {
            plant_queue.push_back(u_cmd.clone());
            let u = plant_queue.pop_front().expect("queue holds the pushed input");
            let torque = u + &pre_feedback;
            x = plant_zoh
                .step(&model.inner, &x, &torque, h_sub)
                .map_err(|source| HarnessError::Plant { t, source })?;
            min_h_cont = min_h_cont.min(system.spec.h(&x));
            max_p = max_p.max(x[0].abs());
            schedule.push(torque);
        }
        if sc.noise {
            let step = |x0: &DVector<f64>| {
                schedule
                    .iter()
                    .try_fold(x0.clone(), |acc, u| plant_zoh.step(&model.inner, &acc, u, h_sub))
            };
            match ekf_predict_map(&est, &q_d, cfg.sensitivity.epsilon, step) {
                Ok(e) => est = e,
                Err(e) => {
                    faults += 1;
                    warn!("estimator prediction failed at t = {t}: {e}");
                }
            }
        }
    }

    let min_h = records.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
    let min_h_continuous = min_h_cont.min(min_h);
    let summary = Summary {
        min_h,
        min_h_continuous,
        max_abs_position: max_p,
        verdict: if min_h_continuous >= 0.0 {
            Verdict::Safe
        } else {
            Verdict::Unsafe
        },
        fallbacks: records.iter().filter(|r| r.fallback).count(),
        faults,
        startup_ok,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        scenario: sc.clone(),
        records,
        summary,
    })
}

fn flow_zoh(cfg: &HarnessConfig) -> Zoh {
    Zoh::new(cfg.backup.substeps)
}
