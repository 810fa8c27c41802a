//! Exact iteration indices and the rational arithmetic the moduli are
//! evaluated with.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A certified iteration index: an arbitrary-precision natural number `>= 1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "BigUint", into = "BigUint")]
pub struct BoundIndex(BigUint);

impl BoundIndex {
    /// Wraps `value`, clamping it into the codomain `N* = {1, 2, ...}`.
    pub fn new(value: BigUint) -> Self {
        if value.is_zero() {
            Self(BigUint::one())
        } else {
            Self(value)
        }
    }

    pub fn from_u64(value: u64) -> Self {
        Self::new(BigUint::from(value))
    }

    pub fn one() -> Self {
        Self(BigUint::one())
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_inner(self) -> BigUint {
        self.0
    }

    /// The index as a `u64`, when it fits.
    pub fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }

    /// Base-10 logarithm, for display. Accurate to ~1e-15 relative.
    pub fn log10_view(&self) -> f64 {
        log10_biguint(&self.0)
    }

    /// Whether this index is at most `horizon`.
    pub fn fits_within(&self, horizon: u64) -> bool {
        self.0 <= BigUint::from(horizon)
    }
}

impl From<BigUint> for BoundIndex {
    fn from(value: BigUint) -> Self {
        Self::new(value)
    }
}

impl From<BoundIndex> for BigUint {
    fn from(value: BoundIndex) -> Self {
        value.0
    }
}

impl fmt::Display for BoundIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl PartialEq<u64> for BoundIndex {
    fn eq(&self, other: &u64) -> bool {
        self.0 == BigUint::from(*other)
    }
}

impl PartialOrd<u64> for BoundIndex {
    fn partial_cmp(&self, other: &u64) -> Option<Ordering> {
        self.0.partial_cmp(&BigUint::from(*other))
    }
}

fn log10_biguint(value: &BigUint) -> f64 {
    let bits = value.bits();
    if bits <= 64 {
        return value.to_u64().map_or(f64::NAN, |v| (v as f64).log10());
    }
    // keep the top 64 bits; the dropped tail changes the mantissa by < 2^-63
    let shift = bits - 64;
    let top = (value >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

/// The exact rational value of a finite `f64`.
pub(crate) fn exact_rational(value: f64, name: &'static str) -> Result<BigRational> {
    BigRational::from_float(value).ok_or_else(|| Error::Domain {
        name,
        value: value.to_string(),
        domain: "finite reals",
    })
}

/// `ceil(x)` for a nonnegative rational, as a natural number.
pub(crate) fn ceil_nonneg(x: &BigRational) -> BigUint {
    debug_assert!(!x.is_negative());
    let (q, r) = x.numer().div_rem(x.denom());
    let q = if r.is_zero() { q } else { q + BigInt::one() };
    q.to_biguint().unwrap_or_default()
}

/// An integer `k >= 1` with `k >= ln(x)`, for rational `x > 1`.
///
/// The double-precision logarithm is nudged up by one ulp before the
/// ceiling. The candidate is then certified exactly: `e^k` is bounded below
/// by a Taylor partial sum, and `k` is bumped until that lower bound reaches
/// `x`.
pub(crate) fn ceil_ln_upper(x: &BigRational) -> Result<u64> {
    if *x <= BigRational::one() {
        return Err(Error::Domain {
            name: "logarithm argument",
            value: x.to_string(),
            domain: "(1, inf)",
        });
    }
    let approx = x.to_f64().unwrap_or(f64::INFINITY);
    if !approx.is_finite() {
        return Err(Error::BoundTooLarge(format!("ln of {x}")));
    }
    let mut k = (approx.ln().next_up().ceil() as u64).max(1);
    while exp_lower_bound(k) < *x {
        k += 1;
    }
    Ok(k)
}

/// A rational strictly below `e^k`.
fn exp_lower_bound(k: u64) -> BigRational {
    let k_r = BigRational::from_integer(BigInt::from(k));
    let mut term = BigRational::one();
    let mut total = BigRational::one();
    for j in 1..=(3 * k + 30) {
        term = term * &k_r / BigRational::from_integer(BigInt::from(j));
        total += &term;
    }
    total
}
