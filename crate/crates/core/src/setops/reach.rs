use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Interval, IntervalBox, SetError};
use crate::dynamics::ControlAffine;
use crate::scalar::Scalar;

/// Picard enclosure settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachConfig {
    /// Radius growth applied to each candidate box.
    pub inflation: f64,
    pub max_iter: usize,
    /// The period is split into this many sub-intervals, each enclosed in turn.
    pub substeps: usize,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            inflation: 1.1,
            max_iter: 20,
            substeps: 1,
        }
    }
}

/// Over-approximates `{φ_τ^u(x0) : τ ∈ [0, dt], u ∈ u_box}`.
pub fn reachable_box<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    x0: &DVector<T>,
    dt: T,
    u_box: &IntervalBox<T>,
    cfg: &ReachConfig,
) -> Result<IntervalBox<T>, SetError> {
    reachable_box_from(model, &IntervalBox::point(x0), dt, u_box, cfg)
}

/// Same as [`reachable_box`] for a set of initial states.
pub fn reachable_box_from<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    start: &IntervalBox<T>,
    dt: T,
    u_box: &IntervalBox<T>,
    cfg: &ReachConfig,
) -> Result<IntervalBox<T>, SetError> {
    if start.dim() != model.state_dim() {
        return Err(SetError::DimensionMismatch {
            expected: model.state_dim(),
            found: start.dim(),
        });
    }
    if u_box.dim() != model.input_dim() {
        return Err(SetError::DimensionMismatch {
            expected: model.input_dim(),
            found: u_box.dim(),
        });
    }
    let subs = cfg.substeps.max(1);
    let h = dt / T::from_usize_lossy(subs);
    let sweep = Interval::new(T::zero(), h);
    let factor = T::lit(cfg.inflation.max(1.0));

    let mut b = start.clone();
    let mut total = start.clone();
    for s in 0..subs {
        let mut x = pad(&picard(model, &b, &b, sweep, u_box)?).inflate(factor);
        let mut encl = None;
        for _ in 0..cfg.max_iter.max(1) {
            let y = picard(model, &b, &x, sweep, u_box)?;
            if x.contains_box(&y) {
                encl = Some(y);
                break;
            }
            x = pad(&y.hull(&x)?).inflate(factor);
        }
        let encl = encl.ok_or(SetError::EnclosureFailed {
            iterations: cfg.max_iter,
            subinterval: s,
        })?;
        let end = picard(model, &b, &encl, Interval::point(h), u_box)?;
        b = intersect(&end, &encl);
        total = total.hull(&encl)?;
    }
    if !total.is_finite() {
        return Err(SetError::NonFinite);
    }
    Ok(total)
}

/// `b + sweep * (f(x) + g(x) u_box)`, the mean-value image over one sub-interval.
fn picard<T: Scalar, M: ControlAffine<T> + ?Sized>(
    model: &M,
    b: &IntervalBox<T>,
    x: &IntervalBox<T>,
    sweep: Interval<T>,
    u_box: &IntervalBox<T>,
) -> Result<IntervalBox<T>, SetError> {
    let f = model.drift_enclosure(x)?;
    let g = model.input_matrix_enclosure(x)?;
    let items: Vec<_> = (0..b.dim())
        .map(|i| {
            let rate = (0..u_box.dim()).fold(f.get(i), |acc, j| acc + g.get(i, j) * u_box.get(j));
            b.get(i) + sweep * rate
        })
        .collect();
    if items.iter().any(|v| !v.is_finite()) {
        return Err(SetError::NonFinite);
    }
    Ok(IntervalBox::from_intervals(&items))
}

/// Widens by a few ulps so rounding in the endpoint arithmetic cannot leak points.
fn pad<T: Scalar>(b: &IntervalBox<T>) -> IntervalBox<T> {
    let tol = T::EPS * T::lit(16.0);
    let margin = DVector::from_iterator(
        b.dim(),
        (0..b.dim()).map(|i| tol * (T::one() + b.get(i).mag())),
    );
    b.pad(&margin)
}

fn intersect<T: Scalar>(a: &IntervalBox<T>, b: &IntervalBox<T>) -> IntervalBox<T> {
    let items: Vec<_> = (0..a.dim())
        .map(|i| {
            let lo = a.get(i).lo().max(b.get(i).lo());
            let hi = a.get(i).hi().min(b.get(i).hi());
            if lo <= hi {
                Interval::new(lo, hi)
            } else {
                a.get(i)
            }
        })
        .collect();
    IntervalBox::from_intervals(&items)
}
