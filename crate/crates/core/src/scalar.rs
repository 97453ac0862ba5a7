//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by every numeric routine in the crate.
///
/// Methods such as `sin` and `sqrt` come from [`RealField`]; conversions go
/// through `num-traits`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default + Send + Sync + 'static
{
    const INFINITY: Self;
    const NEG_INFINITY: Self;
    /// Machine epsilon.
    const EPS: Self;

    /// Converts an `f64` literal. Only used with values representable in `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn finite(self) -> bool;

    fn nan(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const INFINITY: Self = <$t>::INFINITY;
            const NEG_INFINITY: Self = <$t>::NEG_INFINITY;
            const EPS: Self = <$t>::EPSILON;

            #[inline]
            fn finite(self) -> bool {
                self.is_finite()
            }

            #[inline]
            fn nan(self) -> bool {
                self.is_nan()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
