//! Numeric abstraction shared by the analytical models and the simulator.
//!
//! Every rate, cycle count and timestamp in the performance path is generic
//! over [`Scalar`]. Floating point (`f32`/`f64`) is the working type; the
//! rational types give exact arithmetic so that model and simulator can be
//! compared with `==` on small graphs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Sub};

use num_rational::Ratio;
use num_traits::{One, Zero};

/// Exact rational time/rate type.
pub type Exact = Ratio<i128>;

/// A real-like number usable for cycles, rates and word counts.
pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    fn from_u64(v: u64) -> Self;

    fn from_ratio(num: u64, den: u64) -> Self {
        Self::from_u64(num) / Self::from_u64(den)
    }

    fn to_f64(self) -> f64;

    /// Smallest integer not below `self` (negative values clamp to zero).
    fn ceil_u64(self) -> u64;

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_u64(v: u64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn ceil_u64(self) -> u64 {
                if self <= 0.0 {
                    0
                } else {
                    self.ceil() as u64
                }
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

macro_rules! impl_ratio_scalar {
    ($t:ty) => {
        impl Scalar for Ratio<$t> {
            fn from_u64(v: u64) -> Self {
                Ratio::from_integer(v as $t)
            }

            fn from_ratio(num: u64, den: u64) -> Self {
                Ratio::new(num as $t, den as $t)
            }

            fn to_f64(self) -> f64 {
                *self.numer() as f64 / *self.denom() as f64
            }

            fn ceil_u64(self) -> u64 {
                let c = self.ceil().to_integer();
                if c <= 0 {
                    0
                } else {
                    c as u64
                }
            }
        }
    };
}

impl_ratio_scalar!(i64);
impl_ratio_scalar!(i128);

/// Total order wrapper used for event-queue keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Ordered<T: Scalar>(pub T);

impl<T: Scalar> Eq for Ordered<T> {}

impl<T: Scalar> PartialOrd for Ordered<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Ordered<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .partial_cmp(&other.0)
            .expect("scalar values in the event queue must be comparable")
    }
}
