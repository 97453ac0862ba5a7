use nalgebra::DVector;

use super::{check_dim, non_finite, saturate, ControlAffine, DynamicsError};
use crate::scalar::Scalar;

/// Classical RK4 step of `ẋ = f(x) + g(x) u_held` with `u_held` constant over `[0, dt]`.
pub fn step_zoh<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u_held: &DVector<T>,
    dt: T,
) -> Result<DVector<T>, DynamicsError> {
    Zoh::default().step(model, x, u_held, dt)
}

/// Zero-order-hold integrator taking `substeps` RK4 steps per held interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Zoh {
    pub substeps: usize,
}

impl Default for Zoh {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

impl Zoh {
    pub fn new(substeps: usize) -> Self {
        assert!(substeps >= 1, "at least one substep");
        Self { substeps }
    }

    pub fn step<T: Scalar, M: ControlAffine<T> + ?Sized>(
        &self,
        model: &M,
        x: &DVector<T>,
        u_held: &DVector<T>,
        dt: T,
    ) -> Result<DVector<T>, DynamicsError> {
        if !(dt > T::zero()) {
            return Err(DynamicsError::InvalidStep(dt.to_f64_lossy()));
        }
        check_dim(model.state_dim(), x.len())?;
        check_dim(model.input_dim(), u_held.len())?;
        let h = dt / T::from_usize_lossy(self.substeps);
        let mut state = x.clone();
        for _ in 0..self.substeps {
            state = rk4(model, &state, u_held, h)?;
        }
        Ok(state)
    }

    /// Applies a sequence of held inputs, one per interval of length `dt`.
    pub fn rollout<T: Scalar, M: ControlAffine<T> + ?Sized>(
        &self,
        model: &M,
        x: &DVector<T>,
        inputs: &[DVector<T>],
        dt: T,
    ) -> Result<DVector<T>, DynamicsError> {
        let mut state = x.clone();
        for (k, u) in inputs.iter().enumerate() {
            state = self
                .step(model, &state, u, dt)
                .map_err(|e| DynamicsError::Integration {
                    step: k,
                    source: Box::new(e),
                })?;
        }
        Ok(state)
    }

    /// Closed-loop ZOH simulation; see [`simulate_zoh`].
    pub fn simulate<T, M, P>(
        &self,
        model: &M,
        x0: &DVector<T>,
        mut policy: P,
        dt: T,
        steps: usize,
    ) -> Result<Trajectory<T>, DynamicsError>
    where
        T: Scalar,
        M: ControlAffine<T> + ?Sized,
        P: FnMut(usize, &DVector<T>) -> DVector<T>,
    {
        let u_max = model.input_bound();
        let mut states = Vec::with_capacity(steps + 1);
        let mut held_inputs = Vec::with_capacity(steps);
        states.push(x0.clone());
        for k in 0..steps {
            let x = &states[k];
            let u = saturate(&policy(k, x), &u_max);
            let next = self
                .step(model, x, &u, dt)
                .map_err(|e| DynamicsError::Integration {
                    step: k,
                    source: Box::new(e),
                })?;
            held_inputs.push(u);
            states.push(next);
        }
        Ok(Trajectory {
            dt,
            states,
            held_inputs,
        })
    }
}

fn rk4<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u: &DVector<T>,
    h: T,
) -> Result<DVector<T>, DynamicsError> {
    let half = h * T::lit(0.5);
    let k1 = model.vector_field(x, u);
    let k2 = model.vector_field(&(x + &k1 * half), u);
    let k3 = model.vector_field(&(x + &k2 * half), u);
    let k4 = model.vector_field(&(x + &k3 * h), u);
    let next = x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (h / T::lit(6.0));
    if next.iter().all(|v| v.finite()) {
        Ok(next)
    } else {
        Err(non_finite(x))
    }
}

/// Sampled flow under a zero-order-hold input.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub dt: T,
    /// States at `0, dt, ..., N dt`.
    pub states: Vec<DVector<T>>,
    /// Input held over each interval; one fewer than `states`.
    pub held_inputs: Vec<DVector<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.held_inputs.len()
    }

    pub fn terminal(&self) -> &DVector<T> {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Simulates `steps` held intervals of length `dt`.
///
/// The policy is called exactly once per interval, at its start, with the
/// step index and the sampled state. Its output is saturated to the input
/// box and held until the next sample.
pub fn simulate_zoh<T, M, P>(
    model: &M,
    x0: &DVector<T>,
    policy: P,
    dt: T,
    steps: usize,
) -> Result<Trajectory<T>, DynamicsError>
where
    T: Scalar,
    M: ControlAffine<T> + ?Sized,
    P: FnMut(usize, &DVector<T>) -> DVector<T>,
{
    Zoh::default().simulate(model, x0, policy, dt, steps)
}
