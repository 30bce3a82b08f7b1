//! Scalar abstraction used by every numeric routine in this crate.
//!
//! All core math is generic over [`Real`], a small extension of
//! `nalgebra::RealField` + `num_traits::FromPrimitive` that adds the handful
//! of operations the library needs beyond field arithmetic: constant
//! injection from `f64`, infinity handling, and standard-normal sampling.
//! Concrete aliases for the `f64` instantiation live at the crate root.

use nalgebra::RealField;
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar type for all matrix and threshold computations.
pub trait Real: RealField + FromPrimitive + Copy + Default + std::iter::Sum<Self> {
    /// Injects an `f64` constant (tolerances, table values, grid nodes).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must be representable")
    }

    /// Injects a count (dimensions, multiplicities).
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize constant must be representable")
    }

    /// Positive infinity, used as the "no finite value" marker.
    fn inf() -> Self;

    /// True for ordinary finite values; false for infinities and NaN.
    fn finite(self) -> bool;

    /// Lossy view as `f64` for display and serialization boundaries.
    fn to_f64_lossy(self) -> f64;

    /// Draws one standard-normal sample.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn inf() -> Self {
        f64::INFINITY
    }

    fn finite(self) -> bool {
        self.is_finite()
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    }
}

impl Real for f32 {
    fn inf() -> Self {
        f32::INFINITY
    }

    fn finite(self) -> bool {
        self.is_finite()
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng)
    }
}
