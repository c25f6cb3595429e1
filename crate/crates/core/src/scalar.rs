//! Numeric abstraction for cost arithmetic.
//!
//! Pricing is done over any [`Scalar`]: `f64`/`f32` for ordinary reporting and
//! [`num_rational::Rational64`] when totals have to match hand-computed sums
//! exactly.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Scalar type usable for token pricing.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Converts a token count into the scalar domain.
    fn from_count(count: u64) -> Self;

    /// Parses a plain decimal literal such as `"0.005"` without going
    /// through binary floating point.
    fn from_decimal(literal: &str) -> Option<Self>;

    fn to_f64_lossy(&self) -> f64;
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_count(count: u64) -> Self {
                count as $t
            }

            fn from_decimal(literal: &str) -> Option<Self> {
                literal.trim().parse::<$t>().ok().filter(|v| v.is_finite())
            }

            fn to_f64_lossy(&self) -> f64 {
                f64::from(*self)
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for Ratio<i64> {
    fn from_count(count: u64) -> Self {
        Ratio::from_integer(i64::try_from(count).expect("token count exceeds i64"))
    }

    fn from_decimal(literal: &str) -> Option<Self> {
        parse_decimal_ratio(literal.trim())
    }

    fn to_f64_lossy(&self) -> f64 {
        self.numer().to_f64().unwrap_or(f64::NAN) / self.denom().to_f64().unwrap_or(f64::NAN)
    }
}

fn parse_decimal_ratio(literal: &str) -> Option<Ratio<i64>> {
    let (negative, body) = match literal.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, literal.strip_prefix('+').unwrap_or(literal)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer = if digits.is_empty() { 0 } else { digits.parse::<i64>().ok()? };
    let denom = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    let numer = if negative { -numer } else { numer };
    Some(Ratio::new(numer, denom))
}

/// Lossy conversion used when a float rate must be lifted into another
/// scalar domain (config files carry floats).
pub fn from_f64<T: Scalar>(value: f64) -> Option<T> {
    // Display for f64 is the shortest round-trip form and never uses an
    // exponent, so 0.005 stays 0.005 for rationals.
    T::from_decimal(&format!("{value}"))
}
