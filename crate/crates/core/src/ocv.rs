//! Piecewise-linear open-circuit potential curves over electrode lithiation.

use serde::{Deserialize, Serialize};

use crate::num::{cast, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurveError {
    #[error("curve needs at least two points, got {0}")]
    TooShort(usize),
    #[error("stoichiometry must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("potential must be strictly monotone (index {0})")]
    NotMonotone(usize),
    #[error("curve must cover stoichiometry [0, 1], covers [{0}, {1}]")]
    Domain(f64, f64),
    #[error("non-finite curve value at index {0}")]
    NonFinite(usize),
}

/// Open-circuit potential (V vs Li/Li⁺) as a function of lithiation θ ∈ [0, 1].
///
/// Outside the tabulated domain the curve is held at its endpoint value plus a
/// linear penalty of `penalty_slope` V per unit θ, continuing the monotone
/// direction, so abuse excursions stay finite but increasingly costly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve<T>", into = "RawCurve<T>", bound = "T: Real")]
pub struct OcvCurve<T> {
    points: Vec<(T, T)>,
    penalty_slope: T,
    increasing: bool,
    /// For each of [`BUCKETS`] equal sub-ranges of the table, the index of the
    /// first knot above the sub-range start; speeds up segment lookup.
    buckets: Vec<u16>,
}

const BUCKETS: usize = 64;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RawCurve<T> {
    points: Vec<(T, T)>,
    penalty_slope: T,
}

impl<T: Real> TryFrom<RawCurve<T>> for OcvCurve<T> {
    type Error = CurveError;
    fn try_from(raw: RawCurve<T>) -> Result<Self, CurveError> {
        Self::new(raw.points, raw.penalty_slope)
    }
}

impl<T: Real> From<OcvCurve<T>> for RawCurve<T> {
    fn from(c: OcvCurve<T>) -> Self {
        RawCurve {
            points: c.points,
            penalty_slope: c.penalty_slope,
        }
    }
}

impl<T: Real> OcvCurve<T> {
    pub fn new(points: Vec<(T, T)>, penalty_slope: T) -> Result<Self, CurveError> {
        if points.len() < 2 {
            return Err(CurveError::TooShort(points.len()));
        }
        for (i, (x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(CurveError::NonFinite(i));
            }
        }
        let increasing = points[1].1 > points[0].1;
        for i in 1..points.len() {
            if points[i].0 <= points[i - 1].0 {
                return Err(CurveError::NotIncreasing(i));
            }
            let rising = points[i].1 > points[i - 1].1;
            if rising != increasing || points[i].1 == points[i - 1].1 {
                return Err(CurveError::NotMonotone(i));
            }
        }
        let (lo, hi) = (points[0].0, points[points.len() - 1].0);
        if lo > T::zero() || hi < T::one() {
            return Err(CurveError::Domain(lo.as_f64(), hi.as_f64()));
        }
        let buckets = bucket_index(&points);
        Ok(Self {
            points,
            penalty_slope: penalty_slope.abs(),
            increasing,
            buckets,
        })
    }

    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn penalty_slope(&self) -> T {
        self.penalty_slope
    }

    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    fn direction(&self) -> T {
        if self.increasing {
            T::one()
        } else {
            -T::one()
        }
    }

    /// Index k of the first knot with x > theta, for theta strictly inside the table.
    #[inline]
    fn upper_knot(&self, theta: T) -> usize {
        let pts = &self.points;
        let (x0, xn) = (pts[0].0, pts[pts.len() - 1].0);
        let b = ((theta - x0) / (xn - x0) * T::lit(BUCKETS as f64))
            .to_usize()
            .unwrap_or(0)
            .min(BUCKETS - 1);
        let mut k = self.buckets[b] as usize;
        // Rounding in the bucket index can land one bucket high.
        while k > 1 && pts[k - 1].0 > theta {
            k -= 1;
        }
        while pts[k].0 <= theta {
            k += 1;
        }
        k
    }

    /// Potential and slope dU/dθ at lithiation `theta` (slope one-sided at knots).
    #[inline]
    pub fn eval_with_slope(&self, theta: T) -> (T, T) {
        let pts = &self.points;
        let (x0, y0) = pts[0];
        let (xn, yn) = pts[pts.len() - 1];
        let penalty = self.direction() * self.penalty_slope;
        if theta <= x0 {
            return (y0 + penalty * (theta - x0), penalty);
        }
        if theta >= xn {
            return (yn + penalty * (theta - xn), penalty);
        }
        let k = self.upper_knot(theta);
        let (xa, ya) = pts[k - 1];
        let (xb, yb) = pts[k];
        (ya + (yb - ya) * (theta - xa) / (xb - xa), (yb - ya) / (xb - xa))
    }

    /// Potential at lithiation `theta`.
    #[inline]
    pub fn eval(&self, theta: T) -> T {
        self.eval_with_slope(theta).0
    }

    /// Local slope dU/dθ (one-sided at knots).
    #[inline]
    pub fn slope(&self, theta: T) -> T {
        self.eval_with_slope(theta).1
    }

    pub fn cast<U: Real>(&self) -> OcvCurve<U> {
        let points: Vec<(U, U)> = self.points.iter().map(|&(x, y)| (cast(x), cast(y))).collect();
        OcvCurve {
            buckets: bucket_index(&points),
            points,
            penalty_slope: cast(self.penalty_slope),
            increasing: self.increasing,
        }
    }
}

fn bucket_index<T: Real>(points: &[(T, T)]) -> Vec<u16> {
    let (x0, xn) = (points[0].0, points[points.len() - 1].0);
    (0..BUCKETS)
        .map(|b| {
            let start = x0 + (xn - x0) * T::lit(b as f64 / BUCKETS as f64);
            // First knot above the bucket start, but never the first knot itself.
            points.partition_point(|p| p.0 <= start).max(1) as u16
        })
        .collect()
}
