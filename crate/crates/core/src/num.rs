//! Scalar abstraction shared by the cell and pack models.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Faraday constant (C/mol).
pub const FARADAY: f64 = 96_485.332_12;
/// Molar gas constant (J/(mol·K)).
pub const GAS_CONSTANT: f64 = 8.314_462_618;
/// Seconds per hour, used for Ah bookkeeping.
pub const SECONDS_PER_HOUR: f64 = 3_600.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Floating point scalar the electrochemical core is generic over (f32 or f64).
///
/// Long-horizon ageing needs f64: per-second SEI increments are ~1e-8 of the
/// film thickness, below f32 resolution. f32 is fine for short electrical runs.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an f64 literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Convergence floor for iterative solves: `abs` or a few hundred ulps of `scale`.
    #[inline]
    fn solver_tolerance(abs: f64, scale: Self) -> Self {
        let ulps = Self::epsilon() * Self::lit(512.0) * scale.abs().max(Self::one());
        Self::lit(abs).max(ulps)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts between scalar types, e.g. to run an f64 manifest in f32.
#[inline]
pub fn cast<A: Real, B: Real>(x: A) -> B {
    B::lit(x.as_f64())
}
