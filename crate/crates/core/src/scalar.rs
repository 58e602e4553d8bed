use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for test statistics and p-values.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a count ratio `num / den` exactly as the scalar can hold it.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_usize(num).unwrap() / Self::from_usize(den).unwrap()
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    /// Absolute slack below which two statistics are treated as tied.
    fn tie_slack(reference: Self) -> Self {
        Self::epsilon() * Self::lit(256.0) * reference.abs().max(Self::one())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
