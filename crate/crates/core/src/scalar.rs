//! Scalar abstraction so the numeric core runs in either f32 or f64.
//!
//! Training runs in f32 for speed; all analysis re-reads weights as f64.
//! Everything downstream is generic over this trait, with concrete aliases
//! exported from the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point scalar usable in every numeric routine of this crate.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + ndarray::LinalgScalar
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Display
    + Debug
    + Send
    + Sync
    + Sum
    + 'static
{
    /// Lossy conversion from f64, used when materializing constants.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float scalar")
    }

    /// Widen to f64 for reporting and analysis.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
