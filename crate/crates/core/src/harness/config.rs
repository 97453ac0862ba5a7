use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::SegwayParams;
use crate::estimation::EstimationConfig;
use crate::sensitivity::SensitivityConfig;
use crate::setops::ReachConfig;
use crate::synthesis::SynthesisConfig;

use super::HarnessError;

/// The configuration shipped with the simulator.
pub const DEFAULT_CONFIG: &str = include_str!("../../config/default.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Desired input applied directly, saturated.
    Unfiltered,
    /// Constraints at the estimate.
    Nominal,
    /// Constraints over the hold-interval reachable set of the uncertainty box.
    Robust,
    /// Robust constraints at the state predicted through the delay buffer.
    DelayAware,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Unfiltered => "unfiltered",
            Variant::Nominal => "nominal",
            Variant::Robust => "robust",
            Variant::DelayAware => "delay-aware",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Controller rate in Hz.
    pub frequency: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// Input delay in seconds; rounded up to controller periods by the delay-aware filter.
    pub delay: f64,
    pub variant: Variant,
    pub noise: bool,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    /// Plant integration substeps per controller period.
    pub plant_substeps: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frequency: 40.0,
            duration: 20.0,
            delay: 0.0,
            variant: Variant::Nominal,
            noise: false,
            seed: 7,
            initial_state: vec![0.0; 4],
            plant_substeps: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Controller periods in the run.
    pub fn steps(&self) -> usize {
        (self.duration * self.frequency).round() as usize
    }

    /// Delay in plant substeps.
    pub fn delay_substeps(&self) -> usize {
        (self.delay / (self.dt() / self.plant_substeps as f64)).round() as usize
    }
}

/// Tracker toward `setpoint` on the position axis: `u = -K x_ref + kp (p - p_ref) + kd ṗ`
/// on top of the pre-feedback `K x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesiredConfig {
    pub setpoint: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for DesiredConfig {
    fn default() -> Self {
        Self {
            setpoint: 0.8,
            kp: 20.0,
            kd: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    /// `h = 1 - (p / limit)²`.
    pub position_limit: f64,
    /// Backup horizon in seconds; a multiple of every controller period used.
    pub horizon: f64,
    pub alpha_gain: f64,
    /// Trajectory samples turned into constraints.
    pub points: usize,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            position_limit: 0.5,
            horizon: 3.0,
            alpha_gain: 10.0,
            points: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackupConfig {
    /// `ε_B = level_fraction ρ²`.
    pub level_fraction: f64,
    /// RK4 substeps per controller period in the backup rollout.
    pub substeps: usize,
    /// Precomputed gain certificate; synthesized from `[synthesis]` when absent.
    pub certificate: Option<PathBuf>,
}

impl Default for BackupConfig {
    fn default() -> Self {
        Self {
            level_fraction: 0.9,
            substeps: 2,
            certificate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    /// Half-widths of the linearization box around the origin.
    pub half_widths: Vec<f64>,
    pub state_weights: Vec<f64>,
    pub input_weights: Vec<f64>,
    pub gamma: f64,
    pub max_iter: usize,
    pub step: f64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let s = SynthesisConfig::default();
        Self {
            half_widths: vec![0.5, 2.0, 0.3, 2.0],
            state_weights: s.state_weights,
            input_weights: s.input_weights,
            gamma: s.gamma,
            max_iter: s.max_iter,
            step: s.step,
        }
    }
}

impl SynthesisSection {
    pub fn solver(&self) -> SynthesisConfig {
        SynthesisConfig {
            state_weights: self.state_weights.clone(),
            input_weights: self.input_weights.clone(),
            gamma: self.gamma,
            max_iter: self.max_iter,
            step: self.step,
        }
    }
}

/// Whole simulator configuration, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub segway: SegwayParams,
    pub sensitivity: SensitivityConfig,
    pub safety: SafetyConfig,
    pub backup: BackupConfig,
    pub synthesis: SynthesisSection,
    pub estimation: EstimationConfig,
    pub reach: ReachConfig,
    pub scenario: ScenarioConfig,
    pub desired: DesiredConfig,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped config is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every violated requirement.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_owned());
            }
        };
        let s = &self.scenario;
        check(s.frequency.is_finite() && s.frequency > 0.0, "scenario.frequency must be positive");
        check(s.duration.is_finite() && s.duration > 0.0, "scenario.duration must be positive");
        check(s.delay.is_finite() && s.delay >= 0.0, "scenario.delay must be non-negative");
        check(s.plant_substeps >= 1, "scenario.plant_substeps must be at least 1");
        check(s.initial_state.len() == 4, "scenario.initial_state needs 4 entries");
        if s.frequency > 0.0 && s.plant_substeps >= 1 {
            let sub = s.dt() / s.plant_substeps as f64;
            let ratio = s.delay / sub;
            check(
                (ratio - ratio.round()).abs() < 1e-6,
                "scenario.delay must be a multiple of the plant substep",
            );
            let h = self.safety.horizon * s.frequency;
            check(
                (h - h.round()).abs() < 1e-6,
                "safety.horizon must be a multiple of the controller period",
            );
        }
        let sf = &self.safety;
        check(sf.position_limit > 0.0, "safety.position_limit must be positive");
        check(sf.horizon > 0.0, "safety.horizon must be positive");
        check(sf.alpha_gain > 0.0, "safety.alpha_gain must be positive");
        check(sf.points >= 1, "safety.points must be at least 1");
        let b = &self.backup;
        check(
            b.level_fraction > 0.0 && b.level_fraction <= 1.0,
            "backup.level_fraction must be in (0, 1]",
        );
        check(b.substeps >= 1, "backup.substeps must be at least 1");
        check(self.synthesis.half_widths.len() == 4, "synthesis.half_widths needs 4 entries");
        check(
            self.synthesis.half_widths.iter().all(|w| *w >= 0.0),
            "synthesis.half_widths must be non-negative",
        );
        let e = &self.estimation;
        check(
            e.channels.iter().all(|&c| c < 4),
            "estimation.channels must index the 4 states",
        );
        check(
            e.noise_std.len() == e.channels.len(),
            "estimation.noise_std needs one entry per channel",
        );
        check(e.noise_std.iter().all(|v| *v > 0.0), "estimation.noise_std must be positive");
        check(e.process_noise.len() == 4, "estimation.process_noise needs 4 entries");
        check(e.initial_std.len() == 4, "estimation.initial_std needs 4 entries");
        check(e.caps.len() == 4, "estimation.caps needs 4 entries");
        check(e.confidence > 0.0, "estimation.confidence must be positive");
        check(self.segway.u_max > 0.0, "segway.u_max must be positive");
        check(self.sensitivity.epsilon > 0.0, "sensitivity.epsilon must be positive");
        check(self.reach.inflation > 1.0, "reach.inflation must exceed 1");
        check(self.reach.substeps >= 1, "reach.substeps must be at least 1");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_parses_and_round_trips() {
        let cfg = HarnessConfig::shipped();
        let again = HarnessConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn zero_duration_rejected() {
        let mut cfg = HarnessConfig::shipped();
        cfg.scenario.duration = 0.0;
        match cfg.validate() {
            Err(HarnessError::Invalid(v)) => assert!(v.iter().any(|m| m.contains("duration"))),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = HarnessConfig::shipped();
        cfg.scenario.frequency = -1.0;
        cfg.scenario.duration = 0.0;
        cfg.safety.points = 0;
        match cfg.validate() {
            Err(HarnessError::Invalid(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn unknown_variant_and_fields_rejected() {
        assert!(HarnessConfig::from_toml("[scenario]\nvariant = \"magic\"\n").is_err());
        assert!(HarnessConfig::from_toml("[scenario]\nspeed = 3\n").is_err());
    }

    #[test]
    fn delay_substeps() {
        let s = ScenarioConfig {
            frequency: 40.0,
            delay: 0.03,
            ..Default::default()
        };
        assert_eq!(s.delay_substeps(), 12);
        assert_eq!(s.steps(), 800);
    }
}
