use std::collections::VecDeque;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FilterOutput, SafetyFilter};
use crate::barrier::{membership, Membership};
use crate::dynamics::{ControlAffine, DynamicsError, Zoh};
use crate::scalar::Scalar;
use crate::setops::{reachable_box, IntervalBox, ReachConfig, SetError};

/// The last `n` filtered inputs, oldest first, not yet applied by the plant.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBuffer<T: Scalar> {
    entries: VecDeque<DVector<T>>,
    n: usize,
}

impl<T: Scalar> InputBuffer<T> {
    /// `n` zero inputs of dimension `m`.
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            entries: (0..n).map(|_| DVector::zeros(m)).collect(),
            n,
        }
    }

    pub fn delay_steps(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<T>> {
        self.entries.iter()
    }

    /// Appends `u` and returns the input leaving the buffer (`u` itself when `n = 0`).
    pub fn push(&mut self, u: DVector<T>) -> DVector<T> {
        self.entries.push_back(u);
        let out = self.entries.pop_front().expect("buffer holds at least the pushed input");
        assert_eq!(self.entries.len(), self.n, "input buffer length drifted");
        out
    }
}

/// Integrates `x` through the buffered inputs, one held interval each.
pub fn predict_delayed_state<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    zoh: &Zoh,
    x: &DVector<T>,
    buffer: &InputBuffer<T>,
    dt: T,
) -> Result<DVector<T>, DynamicsError> {
    let inputs: Vec<DVector<T>> = buffer.iter().cloned().collect();
    zoh.rollout(model, x, &inputs, dt)
}

/// Rounds a delay up to whole controller periods.
///
/// Returns the step count and the residual `n dt - delay >= 0`.
pub fn delay_steps(delay: f64, dt: f64) -> (usize, f64) {
    if delay <= 0.0 {
        return (0, 0.0);
    }
    let ratio = delay / dt;
    let n = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round()
    } else {
        ratio.ceil()
    };
    let residual = (n * dt - delay).max(0.0);
    (n as usize, residual)
}

/// Symmetric box covering the motion over a residual delay, added to the
/// uncertainty when the delay was rounded up.
pub fn residual_inflation<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    residual: T,
    reach: &ReachConfig,
) -> Result<IntervalBox<T>, SetError> {
    if residual <= T::zero() {
        return Ok(IntervalBox::point(&DVector::zeros(x.len())));
    }
    let r = reachable_box(model, x, residual, &model.input_box(), reach)?;
    let spread = DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| (r.hi()[i] - x[i]).max(x[i] - r.lo()[i])),
    );
    Ok(IntervalBox::centered(&spread))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayedOutput<T: Scalar> {
    pub output: FilterOutput<T>,
    /// State the constraints were built at.
    pub predicted: DVector<T>,
    /// Input leaving the buffer, applied by the plant now.
    pub released: DVector<T>,
}

/// One step of delay-compensated filtering.
///
/// The estimate is pushed through the buffered inputs, the filter runs at the
/// predicted state with `delta_x` padded by `prediction_margin`, and the
/// result enters the buffer.
#[allow(clippy::too_many_arguments)]
pub fn delayed_filter_step<T: Scalar, M: ControlAffine<T> + ?Sized>(
    filter: &mut SafetyFilter<'_, T, M>,
    x_est: &DVector<T>,
    buffer: &mut InputBuffer<T>,
    delta_x: &IntervalBox<T>,
    prediction_margin: &DVector<T>,
    u_des: &DVector<T>,
    dt: T,
) -> DelayedOutput<T> {
    let predicted = match predict_delayed_state(filter.flow.model, &filter.flow.zoh, x_est, buffer, dt) {
        Ok(x) => x,
        Err(e) => {
            log::warn!("delay prediction failed, filtering at the estimate: {e}");
            x_est.clone()
        }
    };
    let widened = delta_x.pad(prediction_margin);
    let output = filter.filter_step(&predicted, &widened, u_des, dt);
    let released = buffer.push(output.u.clone());
    DelayedOutput {
        output,
        predicted,
        released,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartupCheck<T: Scalar> {
    pub checked: usize,
    pub worst: Membership<T>,
}

impl<T: Scalar> StartupCheck<T> {
    pub fn passed(&self) -> bool {
        self.worst.inside
    }
}

/// Zero outer input over the first `n dt` must keep every start in the
/// implicit safe set. Checked on the box corners and `samples` interior points.
pub fn check_zero_input_startup<T: Scalar, M: ControlAffine<T> + ?Sized>(
    filter: &SafetyFilter<'_, T, M>,
    initial: &IntervalBox<T>,
    n: usize,
    dt: T,
    samples: usize,
    seed: u64,
) -> Result<StartupCheck<T>, crate::barrier::BarrierError> {
    let flow = &filter.flow;
    let zero = DVector::zeros(flow.model.input_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<T>> = if initial.dim() <= 12 {
        initial.vertices().collect()
    } else {
        vec![initial.lo().clone(), initial.hi().clone()]
    };
    let points = points.into_iter().chain((0..samples).map(|_| initial.sample(&mut rng)));
    let mut worst: Option<Membership<T>> = None;
    let mut checked = 0;
    for x0 in points {
        let x = flow.zoh.rollout(flow.model, &x0, &vec![zero.clone(); n], dt)?;
        // the states passed through under zero input must stay safe as well
        let mut traj_margin = T::INFINITY;
        let mut y = x0.clone();
        for _ in 0..n {
            traj_margin = traj_margin.min(filter.spec.h(&y));
            y = flow.zoh.step(flow.model, &y, &zero, dt)?;
        }
        let mut m = membership(flow, &x, filter.spec, dt)?;
        if traj_margin < m.margin {
            m.margin = traj_margin;
            m.inside = m.inside && traj_margin >= T::zero();
        }
        checked += 1;
        if worst.as_ref().is_none_or(|w| m.margin < w.margin) {
            worst = Some(m);
        }
    }
    Ok(StartupCheck {
        checked,
        worst: worst.expect("at least one start point"),
    })
}
