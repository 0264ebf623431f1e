//! Exact rational arithmetic and the `p/q` string format used everywhere.
//!
//! Ties (equidistant agents, equal utilities) decide tie-breaking and audit
//! verdicts, so nothing in this crate goes through floating point. Values
//! are `Ratio<i128>`: every quantity the workbench itself produces has a
//! denominator dividing the lcm of its input denominators, which stays far
//! below the overflow range for desk-scale grids.

use crate::error::Error;
use num_rational::Ratio;
use num_traits::{One, Zero};

pub type Rational = Ratio<i128>;

/// Largest numerator/denominator magnitude accepted on input. Keeps every
/// downstream product comfortably inside `i128`.
pub const MAX_INPUT_MAGNITUDE: i128 = 1_000_000_000;

pub fn rational(numer: i128, denom: i128) -> Rational {
    Ratio::new(numer, denom)
}

/// Formats a rational the way the JSON/CSV interfaces expect: `p/q` in
/// lowest terms, or just `p` when the denominator is 1.
pub fn format_rational(value: &Rational) -> String {
    if value.denom().is_one() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Parses `p/q`, integer, or decimal strings into an exact rational.
///
/// Decimals convert exactly (`0.2` becomes `1/5`), so files written with
/// decimal locations round-trip through the canonical `p/q` form.
pub fn parse_rational(text: &str) -> Result<Rational, Error> {
    let bad = || Error::InvalidLocation(text.to_string());
    let s = text.trim();
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = s.split_once('/') {
        let numer: i128 = p.trim().parse().map_err(|_| bad())?;
        let denom: i128 = q.trim().parse().map_err(|_| bad())?;
        if denom == 0 || numer.abs() > MAX_INPUT_MAGNITUDE || denom.abs() > MAX_INPUT_MAGNITUDE {
            return Err(bad());
        }
        return Ok(Ratio::new(numer, denom));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let negative = whole.trim_start().starts_with('-');
        let whole_val: i128 = if whole.is_empty() || whole == "-" {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let frac_val: i128 = frac.parse().map_err(|_| bad())?;
        let scale = 10_i128
            .checked_pow(frac.len() as u32)
            .filter(|&s| s <= MAX_INPUT_MAGNITUDE)
            .ok_or_else(bad)?;
        if whole_val.abs() > MAX_INPUT_MAGNITUDE {
            return Err(bad());
        }
        let magnitude = Ratio::new(whole_val.abs(), 1) + Ratio::new(frac_val, scale);
        return Ok(if negative || whole_val < 0 {
            -magnitude
        } else {
            magnitude
        });
    }
    let numer: i128 = s.parse().map_err(|_| bad())?;
    if numer.abs() > MAX_INPUT_MAGNITUDE {
        return Err(bad());
    }
    Ok(Ratio::from_integer(numer))
}

pub fn is_zero(value: &Rational) -> bool {
    value.is_zero()
}

/// Serde helpers for fields holding a `Rational` as a `p/q` string.
pub mod serde_rational {
    use super::*;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Rational, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&format_rational(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(de)?;
        parse_rational(&text).map_err(de::Error::custom)
    }
}
