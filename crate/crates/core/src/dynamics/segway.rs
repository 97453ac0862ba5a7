//! Planar two-wheeled inverted pendulum.
//!
//! State `x = [p, ṗ, θ, θ̇]`: wheel travel (m), its rate, body pitch from
//! upright (rad, positive leaning towards +p) and pitch rate. The single input
//! is the motor command; the motor applies torque `k_τ u` between body and
//! wheels.
//!
//! With `a = m_w + J_w / r² + m_b`, `b = m_b l`, `c = m_b l² + J_b` the
//! Lagrangian equations read
//!
//! ```text
//! [a       b cos θ] [p̈]   [b sin θ θ̇² + k_τ u / r]
//! [b cos θ c      ] [θ̈] = [b g sin θ   - k_τ u    ]
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ControlAffine;
use crate::scalar::Scalar;
use crate::setops::{Arith, Interval, IntervalBox, IntervalMatrix, SetError};

/// Physical parameters, SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegwayParams {
    /// Combined mass of both wheels (kg).
    pub wheel_mass: f64,
    /// Combined wheel inertia about the axle (kg m²).
    pub wheel_inertia: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Body mass (kg).
    pub body_mass: f64,
    /// Body inertia about its center of mass (kg m²).
    pub body_inertia: f64,
    /// Axle to body center of mass (m).
    pub com_length: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Torque per unit of motor command (N m).
    pub torque_constant: f64,
    /// Bound on the motor command.
    pub u_max: f64,
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            wheel_mass: 5.0,
            wheel_inertia: 0.1,
            wheel_radius: 0.195,
            body_mass: 45.0,
            body_inertia: 3.0,
            com_length: 0.3,
            gravity: 9.81,
            torque_constant: 1.0,
            u_max: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segway<T: Scalar> {
    params: SegwayParams,
    a: T,
    b: T,
    c: T,
    gravity: T,
    kt: T,
    radius: T,
    u_max: T,
}

impl<T: Scalar> Segway<T> {
    pub fn new(params: SegwayParams) -> Self {
        let p = &params;
        let a = p.wheel_mass + p.wheel_inertia / (p.wheel_radius * p.wheel_radius) + p.body_mass;
        let b = p.body_mass * p.com_length;
        let c = p.body_mass * p.com_length * p.com_length + p.body_inertia;
        Self {
            a: T::lit(a),
            b: T::lit(b),
            c: T::lit(c),
            gravity: T::lit(p.gravity),
            kt: T::lit(p.torque_constant),
            radius: T::lit(p.wheel_radius),
            u_max: T::lit(p.u_max),
            params,
        }
    }

    pub fn params(&self) -> &SegwayParams {
        &self.params
    }

    /// Drift accelerations and input gains `(p̈_f, θ̈_f, p̈_g, θ̈_g)`, written
    /// once for points and intervals.
    fn accelerations<N: Arith<T>>(&self, theta: &N, theta_dot: &N) -> [N; 4] {
        let k = |v: T| N::constant(v);
        let s = theta.sine();
        let co = theta.cosine();
        let det = k(self.a * self.c) - k(self.b * self.b) * co.square();
        let r1 = k(self.b) * s.clone() * theta_dot.square();
        let r2 = k(self.b * self.gravity) * s;
        let p_f = (k(self.c) * r1.clone() - k(self.b) * co.clone() * r2.clone()) / det.clone();
        let th_f = (k(self.a) * r2 - k(self.b) * co.clone() * r1) / det.clone();
        let p_g = (k(self.c * self.kt / self.radius) + k(self.b * self.kt) * co.clone()) / det.clone();
        let th_g = (-k(self.a * self.kt) - k(self.b * self.kt / self.radius) * co) / det;
        [p_f, th_f, p_g, th_g]
    }
}

impl<T: Scalar> ControlAffine<T> for Segway<T> {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn input_bound(&self) -> DVector<T> {
        DVector::from_element(1, self.u_max)
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        let [p_f, th_f, _, _] = self.accelerations(&x[2], &x[3]);
        DVector::from_column_slice(&[x[1], p_f, x[3], th_f])
    }

    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        let [_, _, p_g, th_g] = self.accelerations(&x[2], &x[3]);
        DMatrix::from_column_slice(4, 1, &[T::zero(), p_g, T::zero(), th_g])
    }

    fn vector_field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let [p_f, th_f, p_g, th_g] = self.accelerations(&x[2], &x[3]);
        DVector::from_column_slice(&[x[1], p_f + p_g * u[0], x[3], th_f + th_g * u[0]])
    }

    fn drift_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalBox<T>, SetError> {
        let [p_f, th_f, _, _] = self.accelerations(&x.get(2), &x.get(3));
        Ok(IntervalBox::from_intervals(&[x.get(1), p_f, x.get(3), th_f]))
    }

    fn input_matrix_enclosure(&self, x: &IntervalBox<T>) -> Result<IntervalMatrix<T>, SetError> {
        let [_, _, p_g, th_g] = self.accelerations(&x.get(2), &x.get(3));
        let col = [Interval::point(T::zero()), p_g, Interval::point(T::zero()), th_g];
        Ok(IntervalMatrix::from_fn(4, 1, |i, _| col[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::eval_dynamics;
    use nalgebra::{dvector, SymmetricEigen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn segway() -> Segway<f64> {
        Segway::new(SegwayParams::default())
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let dx = eval_dynamics(&segway(), &DVector::zeros(4), &dvector![0.0]).unwrap();
        assert_eq!(dx, DVector::zeros(4));
    }

    #[test]
    fn gravity_tips_body_further() {
        let dx = eval_dynamics(&segway(), &dvector![0.0, 0.0, 0.1, 0.0], &dvector![0.0]).unwrap();
        assert!(dx[3] > 0.0);
        // the wheels roll back under a forward lean
        assert!(dx[1] < 0.0);
    }

    #[test]
    fn positive_torque_drives_forward_and_pitches_back() {
        let g = segway().input_matrix(&DVector::zeros(4));
        assert!(g[(1, 0)] > 0.0);
        assert!(g[(3, 0)] < 0.0);
    }

    #[test]
    fn linearization_is_unstable() {
        let m = segway();
        let h = 1e-6;
        let mut a = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut xp = DVector::zeros(4);
            let mut xm = DVector::zeros(4);
            xp[j] = h;
            xm[j] = -h;
            let col = (m.drift(&xp) - m.drift(&xm)) / (2.0 * h);
            a.set_column(j, &col);
        }
        let eig = a.complex_eigenvalues();
        assert!(eig.iter().any(|e| e.re > 1.0), "{eig:?}");
        // symmetric part sanity: the matrix is not trivially zero
        let sym = SymmetricEigen::new(&a + a.transpose());
        assert!(sym.eigenvalues.amax() > 0.0);
    }

    #[test]
    fn interval_extension_encloses_points() {
        let m = segway();
        let bx = IntervalBox::new(dvector![-0.5, -1.0, -0.3, -2.0], dvector![0.5, 1.0, 0.4, 2.0]).unwrap();
        let f = m.drift_enclosure(&bx).unwrap();
        let g = m.input_matrix_enclosure(&bx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = bx.sample(&mut rng);
            assert!(f.contains(&m.drift(&x)));
            assert!(g.contains(&m.input_matrix(&x)));
        }
    }

    #[test]
    fn single_precision_model_agrees() {
        let m32 = Segway::<f32>::new(SegwayParams::default());
        let m64 = segway();
        let x32 = dvector![0.1f32, 0.2, -0.05, 0.3];
        let x64 = x32.map(|v| v as f64);
        let d32 = m32.vector_field(&x32, &dvector![1.5f32]);
        let d64 = m64.vector_field(&x64, &dvector![1.5]);
        for i in 0..4 {
            assert!((d32[i] as f64 - d64[i]).abs() < 1e-4);
        }
    }
}
