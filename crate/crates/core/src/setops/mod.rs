//! Intervals, boxes, expression enclosures and one-step reachable sets.

mod boxes;
mod expr;
mod interval;
mod reach;

use thiserror::Error;

pub use boxes::{box_sum, ellipsoid_box, interval_dot, row_dot_box, IntervalBox, IntervalMatrix};
pub use expr::{interval_eval, interval_eval_vec, Expr};
pub use interval::{Arith, Interval};
pub use reach::{reachable_box, reachable_box_from, ReachConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid bounds on axis {axis}: lo {lo} > hi {hi}")]
    InvalidBounds { axis: usize, lo: f64, hi: f64 },
    #[error("primitive `{0}` has no interval extension")]
    UnsupportedPrimitive(String),
    #[error("shape matrix is singular")]
    SingularShape,
    #[error("enclosure did not contract after {iterations} iterations on sub-interval {subinterval}")]
    EnclosureFailed { iterations: usize, subinterval: usize },
    #[error("enclosure is not finite")]
    NonFinite,
}
