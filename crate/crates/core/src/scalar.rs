//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// All matrix code is written against this trait. Configuration values
/// (hyperparameters, kernel bandwidths) stay `f64` and are lifted with
/// [`Real::lit`] at the point of use.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// A tolerance of `value`, widened to a few ulps of the scalar type when
    /// the type cannot resolve it (f32).
    #[inline]
    fn tolerance(value: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(64.0);
        let v = Self::lit(value);
        if v > floor {
            v
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
