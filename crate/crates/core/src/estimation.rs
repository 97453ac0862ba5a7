//! Noisy sensors and an extended Kalman filter producing the uncertainty box.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlAffine, DynamicsError, Zoh};
use crate::sensitivity::{step_jacobian, SensitivityConfig, SensitivityError};
use crate::setops::IntervalBox;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("measurement has {found} channels, sensor provides {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

/// Linear measurement `z = H x + v`, `v ~ N(0, diag(std²))`.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub h: DMatrix<f64>,
    pub noise_std: DVector<f64>,
    rng: ChaCha8Rng,
}

impl SensorModel {
    pub fn new(h: DMatrix<f64>, noise_std: DVector<f64>, seed: u64) -> Self {
        assert_eq!(h.nrows(), noise_std.len());
        Self {
            h,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Rows of the identity picking the listed state channels.
    pub fn selecting(channels: &[usize], n: usize, noise_std: DVector<f64>, seed: u64) -> Self {
        let h = DMatrix::from_fn(channels.len(), n, |i, j| if channels[i] == j { 1.0 } else { 0.0 });
        Self::new(h, noise_std, seed)
    }

    pub fn channels(&self) -> usize {
        self.h.nrows()
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_std.map(|s| s * s))
    }

    pub fn measure(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let clean = &self.h * x;
        let noise = DVector::from_iterator(
            self.channels(),
            self.noise_std.iter().map(|&s| {
                if s > 0.0 {
                    Normal::new(0.0, s).expect("finite noise std").sample(&mut self.rng)
                } else {
                    0.0
                }
            }),
        );
        clean + noise
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl EkfState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }
}

/// Symmetrizes and clamps negative eigenvalues, warning when the clamp was needed.
fn repair(cov: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= -1e-12 {
        return sym;
    }
    warn!("covariance lost positive semidefiniteness; re-projecting");
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Mean through one held step; covariance `F Σ Fᵀ + Q_d` with `F` the step Jacobian.
pub fn ekf_predict<M: ControlAffine<f64> + ?Sized>(
    model: &M,
    zoh: &Zoh,
    est: &EkfState,
    u_held: &DVector<f64>,
    dt: f64,
    q_d: &DMatrix<f64>,
    sens: &SensitivityConfig,
) -> Result<EkfState, EstimationError> {
    let mean = zoh.step(model, &est.mean, u_held, dt).map_err(SensitivityError::from)?;
    let f = step_jacobian(model, zoh, &est.mean, u_held, dt, sens)?;
    let cov = &f * &est.covariance * f.transpose() + q_d;
    Ok(EkfState {
        mean,
        covariance: repair(cov),
    })
}

/// [`ekf_predict`] through an arbitrary one-interval transition, with a
/// central-difference Jacobian of step `epsilon (1 + |x|∞)`.
pub fn ekf_predict_map(
    est: &EkfState,
    q_d: &DMatrix<f64>,
    epsilon: f64,
    step: impl Fn(&DVector<f64>) -> Result<DVector<f64>, DynamicsError>,
) -> Result<EkfState, EstimationError> {
    let n = est.mean.len();
    let mean = step(&est.mean).map_err(SensitivityError::from)?;
    let eps = epsilon * (1.0 + est.mean.amax());
    let mut f = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = est.mean.clone();
        let mut xm = est.mean.clone();
        xp[j] += eps;
        xm[j] -= eps;
        let col = (step(&xp).map_err(SensitivityError::from)? - step(&xm).map_err(SensitivityError::from)?) / (2.0 * eps);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(SensitivityError::NonFiniteColumn { axis: j }.into());
        }
        f.set_column(j, &col);
    }
    let cov = &f * &est.covariance * f.transpose() + q_d;
    Ok(EkfState {
        mean,
        covariance: repair(cov),
    })
}

/// Kalman update with the Joseph-form covariance.
pub fn ekf_update(est: &EkfState, z: &DVector<f64>, sensor: &SensorModel) -> Result<EkfState, EstimationError> {
    if z.len() != sensor.channels() {
        return Err(EstimationError::Dimension {
            expected: sensor.channels(),
            found: z.len(),
        });
    }
    let h = &sensor.h;
    let r = sensor.noise_covariance();
    let s = h * &est.covariance * h.transpose() + &r;
    let s_inv = s.try_inverse().ok_or(EstimationError::SingularInnovation)?;
    if s_inv.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::SingularInnovation);
    }
    let k = &est.covariance * h.transpose() * s_inv;
    let innovation = z - h * &est.mean;
    let mean = &est.mean + &k * innovation;
    let n = est.mean.len();
    let ikh = DMatrix::identity(n, n) - &k * h;
    let cov = &ikh * &est.covariance * ikh.transpose() + &k * r * k.transpose();
    Ok(EkfState {
        mean,
        covariance: repair(cov),
    })
}

/// `±c sqrt(Σᵢᵢ)` box centered at the origin.
pub fn uncertainty_box(est: &EkfState, c: f64) -> IntervalBox<f64> {
    let r = est.covariance.diagonal().map(|v| c * v.max(0.0).sqrt());
    IntervalBox::centered(&r)
}

/// [`uncertainty_box`] with each radius limited by `caps`.
pub fn capped_uncertainty_box(est: &EkfState, c: f64, caps: &DVector<f64>) -> IntervalBox<f64> {
    let b = uncertainty_box(est, c);
    IntervalBox::centered(&b.hi().zip_map(caps, |r, cap| r.min(cap)))
}

/// Covariance after running `inputs` through the prediction step without updates.
pub fn propagate_covariance<M: ControlAffine<f64> + ?Sized>(
    model: &M,
    zoh: &Zoh,
    est: &EkfState,
    inputs: &[DVector<f64>],
    dt: f64,
    q_d: &DMatrix<f64>,
    sens: &SensitivityConfig,
) -> Result<EkfState, EstimationError> {
    inputs
        .iter()
        .try_fold(est.clone(), |acc, u| ekf_predict(model, zoh, &acc, u, dt, q_d, sens))
}

/// Estimation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Measured state indices.
    pub channels: Vec<usize>,
    pub noise_std: Vec<f64>,
    /// Diagonal of the discrete process noise per controller step.
    pub process_noise: Vec<f64>,
    /// Diagonal of the initial covariance.
    pub initial_std: Vec<f64>,
    /// Box half-width in standard deviations.
    pub confidence: f64,
    /// Per-axis caps on the box radius.
    pub caps: Vec<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            channels: vec![0, 2, 3],
            noise_std: vec![0.002, 0.002, 0.01],
            process_noise: vec![1e-8, 1e-6, 1e-8, 1e-6],
            initial_std: vec![0.005, 0.02, 0.005, 0.02],
            confidence: 3.0,
            caps: vec![0.05, 0.2, 0.05, 0.2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearModel;
    use nalgebra::{dmatrix, dvector};

    fn sens() -> SensitivityConfig {
        SensitivityConfig::default()
    }

    #[test]
    fn frozen_model_keeps_covariance() {
        let m = LinearModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), dvector![1.0]);
        let est = EkfState::new(dvector![0.1, 0.2], dmatrix![0.3, 0.1; 0.1, 0.2]);
        let next = ekf_predict(&m, &Zoh::default(), &est, &dvector![0.0], 0.1, &DMatrix::zeros(2, 2), &sens()).unwrap();
        assert!((next.covariance - est.covariance).amax() < 1e-10);
    }

    #[test]
    fn process_noise_adds_exactly() {
        let m = LinearModel::new(dmatrix![0.0], dmatrix![0.0], dvector![1.0]);
        let est = EkfState::new(dvector![0.0], dmatrix![0.5]);
        let q = 0.3 * 0.1;
        let next = ekf_predict(&m, &Zoh::default(), &est, &dvector![0.0], 0.1, &dmatrix![q], &sens()).unwrap();
        assert!((next.covariance[(0, 0)] - (0.5 + q)).abs() < 1e-10);
    }

    #[test]
    fn double_integrator_matches_recursion() {
        let m = LinearModel::<f64>::double_integrator(1.0);
        let dt = 0.1;
        let f = dmatrix![1.0, dt; 0.0, 1.0];
        let q = dmatrix![1e-4, 0.0; 0.0, 2e-3];
        let mut est = EkfState::new(dvector![0.0, 0.0], dmatrix![0.2, 0.05; 0.05, 0.1]);
        let mut oracle = est.covariance.clone();
        for _ in 0..20 {
            est = ekf_predict(&m, &Zoh::default(), &est, &dvector![0.3], dt, &q, &sens()).unwrap();
            oracle = &f * oracle * f.transpose() + &q;
        }
        assert!((est.covariance - oracle).amax() < 1e-9);
    }

    #[test]
    fn map_prediction_matches_held_step() {
        let m = LinearModel::new(dmatrix![0.0, 1.0; 2.0, -0.3], dmatrix![0.0; 1.0], dvector![5.0]);
        let zoh = Zoh::new(4);
        let est = EkfState::new(dvector![0.1, -0.2], dmatrix![0.2, 0.01; 0.01, 0.1]);
        let q = DMatrix::identity(2, 2) * 1e-4;
        let u = dvector![0.7];
        let a = ekf_predict(&m, &zoh, &est, &u, 0.05, &q, &sens()).unwrap();
        let b = ekf_predict_map(&est, &q, 1e-5, |x| zoh.step(&m, x, &u, 0.05)).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-15);
        assert!((a.covariance - b.covariance).amax() < 1e-9);
    }

    #[test]
    fn gaussian_fusion() {
        let sensor = SensorModel::new(dmatrix![1.0], dvector![1.0], 0);
        let est = EkfState::new(dvector![0.0], dmatrix![1.0]);
        let post = ekf_update(&est, &dvector![1.0], &sensor).unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-15);
        assert!((post.covariance[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noise_limits() {
        let est = EkfState::new(dvector![0.0, 0.0, 0.0], DMatrix::identity(3, 3) * 0.1);
        let z = dvector![0.4, -0.2];
        let exact = SensorModel::selecting(&[0, 2], 3, dvector![1e-9, 1e-9], 0);
        let post = ekf_update(&est, &z, &exact).unwrap();
        assert!((post.mean[0] - 0.4).abs() < 1e-12 && (post.mean[2] + 0.2).abs() < 1e-12);
        let blind = SensorModel::selecting(&[0, 2], 3, dvector![1e12, 1e12], 0);
        let post = ekf_update(&est, &z, &blind).unwrap();
        assert!((post.mean - &est.mean).amax() < 1e-20);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let sensor = SensorModel::new(dmatrix![1.0], dvector![0.0], 0);
        let est = EkfState::new(dvector![0.0], dmatrix![0.0]);
        assert!(matches!(
            ekf_update(&est, &dvector![1.0], &sensor),
            Err(EstimationError::SingularInnovation)
        ));
    }

    #[test]
    fn boxes() {
        let est = EkfState::new(DVector::zeros(4), DMatrix::zeros(4, 4));
        assert!(uncertainty_box(&est, 3.0).is_point());
        let est = EkfState::new(DVector::zeros(4), DMatrix::identity(4, 4) * 0.01);
        let b = uncertainty_box(&est, 3.0);
        assert!(b.hi().iter().all(|r| (r - 0.3).abs() < 1e-15));
        let capped = capped_uncertainty_box(&est, 3.0, &dvector![0.1, 1.0, 1.0, 1.0]);
        assert_eq!(capped.hi()[0], 0.1);
    }

    #[test]
    fn same_seed_same_noise() {
        let mut a = SensorModel::selecting(&[0, 1], 2, dvector![0.1, 0.2], 42);
        let mut b = SensorModel::selecting(&[0, 1], 2, dvector![0.1, 0.2], 42);
        let x = dvector![1.0, 2.0];
        for _ in 0..50 {
            assert_eq!(a.measure(&x), b.measure(&x));
        }
    }

    #[test]
    fn covariance_stays_psd_over_many_cycles() {
        let m = LinearModel::new(dmatrix![0.0, 1.0; 5.0, -0.1], dmatrix![0.0; 1.0], dvector![1.0]);
        let mut sensor = SensorModel::selecting(&[0], 2, dvector![0.01], 9);
        let q = DMatrix::identity(2, 2) * 1e-6;
        let mut est = EkfState::new(dvector![0.0, 0.0], DMatrix::identity(2, 2) * 0.1);
        let x = dvector![0.0, 0.0];
        for _ in 0..10_000 {
            est = ekf_predict(&m, &Zoh::default(), &est, &dvector![0.0], 0.01, &q, &sens()).unwrap();
            let z = sensor.measure(&x);
            est = ekf_update(&est, &z, &sensor).unwrap();
            let c = &est.covariance;
            assert!((c - c.transpose()).amax() < 1e-12);
            assert!(SymmetricEigen::new(c.clone()).eigenvalues.min() >= -1e-12);
        }
    }
}
