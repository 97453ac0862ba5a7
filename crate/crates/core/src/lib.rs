//! Backup-controller control barrier functions for sampled-data systems.

pub mod barrier;
pub mod dynamics;
pub mod estimation;
pub mod harness;
pub mod safety_filter;
pub mod scalar;
pub mod sensitivity;
pub mod setops;
pub mod synthesis;

pub use scalar::Scalar;

pub type Interval64 = setops::Interval<f64>;
pub type IntervalBox64 = setops::IntervalBox<f64>;
pub type Interval32 = setops::Interval<f32>;
pub type IntervalBox32 = setops::IntervalBox<f32>;
pub type Segway64 = dynamics::Segway<f64>;
