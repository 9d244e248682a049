//! Fixed-point token quantities.
//!
//! One carbon token is 10⁻⁴ CAD, so 100 tokens are one cent. Amounts are
//! stored as integer centi-tokens; every sum in the ledger is exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tokens per Canadian dollar.
pub const TOKENS_PER_CAD: i64 = 10_000;

/// Centi-tokens per token.
pub const CENTI_PER_TOKEN: i64 = 100;

/// Signed token amount with two decimal places.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[must_use]
pub struct TokenAmount(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid token amount {input:?}: {reason}")]
pub struct ParseAmountError {
    pub input: String,
    pub reason: &'static str,
}

impl TokenAmount {
    pub const ZERO: Self = Self(0);

    pub const fn from_centi(centi: i64) -> Self {
        Self(centi)
    }

    pub const fn from_tokens(tokens: i64) -> Self {
        Self(tokens * CENTI_PER_TOKEN)
    }

    pub const fn centi(self) -> i64 {
        self.0
    }

    pub const fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, other: Self) -> Option<Self> {
        self.0.checked_add(other.0).map(Self)
    }

    pub fn checked_sub(self, other: Self) -> Option<Self> {
        self.0.checked_sub(other.0).map(Self)
    }

    /// Multiplies by an integer count.
    pub fn times(self, n: i64) -> Self {
        Self(self.0 * n)
    }

    pub fn max(self, other: Self) -> Self {
        Self(self.0.max(other.0))
    }

    pub fn min(self, other: Self) -> Self {
        Self(self.0.min(other.0))
    }

    /// Approximate token value, for display and statistics only.
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / CENTI_PER_TOKEN as f64
    }

    /// Fiat value at par, in CAD.
    pub fn to_cad(self, tokens_per_cad: f64) -> f64 {
        self.as_f64() / tokens_per_cad
    }

    /// Splits `self` into `n` parts that differ by at most one centi-token and
    /// sum back to `self` exactly. The earlier parts receive the remainder.
    pub fn split_even(self, n: usize) -> Vec<TokenAmount> {
        if n == 0 {
            return Vec::new();
        }
        let n_i = n as i64;
        let base = self.0.div_euclid(n_i);
        let rem = self.0.rem_euclid(n_i) as usize;
        (0..n)
            .map(|i| Self(base + i64::from(i < rem)))
            .collect()
    }

    /// Splits `self` proportionally to `weights` using largest remainders, so
    /// the parts sum to `self` exactly. Ties go to the earlier index.
    pub fn split_weighted(self, weights: &[u64]) -> Vec<TokenAmount> {
        let total_w: u128 = weights.iter().map(|&w| u128::from(w)).sum();
        if weights.is_empty() {
            return Vec::new();
        }
        if total_w == 0 {
            return self.split_even(weights.len());
        }
        let negative = self.0 < 0;
        let total = u128::from(self.0.unsigned_abs());
        let mut parts: Vec<u128> = Vec::with_capacity(weights.len());
        let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
        for (i, &w) in weights.iter().enumerate() {
            let num = total * u128::from(w);
            parts.push(num / total_w);
            rems.push((num % total_w, i));
        }
        let assigned: u128 = parts.iter().sum();
        let mut left = (total - assigned) as usize;
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &rems {
            if left == 0 {
                break;
            }
            parts[i] += 1;
            left -= 1;
        }
        parts
            .into_iter()
            .map(|p| {
                let v = p as i64;
                Self(if negative { -v } else { v })
            })
            .collect()
    }

    /// Mean of `sum` over `n`, rounded half away from zero to the centi-token.
    pub fn mean_rounded(sum: TokenAmount, n: usize) -> Option<TokenAmount> {
        if n == 0 {
            return None;
        }
        let n = n as i128;
        let s = i128::from(sum.0);
        let q = (2 * s.abs() + n) / (2 * n);
        Some(Self((q * s.signum()) as i64))
    }
}

impl fmt::Display for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for TokenAmount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseAmountError {
            input: s.to_string(),
            reason,
        };
        let t = s.trim();
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let body: String = body.chars().filter(|&c| c != ',' && c != '_').collect();
        if body.is_empty() {
            return Err(err("empty"));
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body.as_str(), ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("no digits"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(err("non-digit character"));
        }
        if frac_part.len() > 2 {
            return Err(err("more than two decimal places"));
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| err("out of range"))?
        };
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| err("out of range"))?
        };
        if frac_part.len() == 1 {
            frac *= 10;
        }
        let centi = int
            .checked_mul(CENTI_PER_TOKEN)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(|| err("out of range"))?;
        Ok(Self(if negative { -centi } else { centi }))
    }
}

impl Serialize for TokenAmount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TokenAmount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add for TokenAmount {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self(self.0.checked_add(rhs.0).expect("token amount overflow"))
    }
}

impl Sub for TokenAmount {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self(self.0.checked_sub(rhs.0).expect("token amount overflow"))
    }
}

impl Neg for TokenAmount {
    type Output = Self;

    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl AddAssign for TokenAmount {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for TokenAmount {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Sum for TokenAmount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a TokenAmount> for TokenAmount {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn amt(s: &str) -> TokenAmount {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(amt("493.79").centi(), 49_379);
        assert_eq!(amt("1,573,708.73").centi(), 157_370_873);
        assert_eq!(amt("-45.24").to_string(), "-45.24");
        assert_eq!(amt("0.5").to_string(), "0.50");
        assert_eq!(amt("-0.05").to_string(), "-0.05");
        assert_eq!(amt("206").to_string(), "206.00");
        assert!("1.234".parse::<TokenAmount>().is_err());
        assert!("abc".parse::<TokenAmount>().is_err());
        assert!("".parse::<TokenAmount>().is_err());
    }

    #[test]
    fn hundred_tokens_are_one_cent() {
        assert_eq!(TokenAmount::from_tokens(100).to_cad(TOKENS_PER_CAD as f64), 0.01);
    }

    #[test]
    fn split_even_largest_remainder() {
        let parts = amt("100.00").split_even(3);
        assert_eq!(parts, vec![amt("33.34"), amt("33.33"), amt("33.33")]);
        assert_eq!(amt("1573708.73").split_even(3187)[0], amt("493.79"));
        assert_eq!(amt("7.00").split_even(1), vec![amt("7.00")]);
        assert!(amt("1.00").split_even(0).is_empty());
    }

    #[test]
    fn split_weighted_assigns_remainder_to_largest_fraction() {
        // 1.00 over weights 1:1:1 -> 34, 33, 33
        let parts = amt("1.00").split_weighted(&[1, 1, 1]);
        assert_eq!(parts.iter().sum::<TokenAmount>(), amt("1.00"));
        assert_eq!(parts[0], amt("0.34"));
        // 0.10 over 1:2 -> 3.33.. / 6.66.. -> 3, 7
        assert_eq!(
            amt("0.10").split_weighted(&[1, 2]),
            vec![amt("0.03"), amt("0.07")]
        );
    }

    #[test]
    fn rounded_mean() {
        assert_eq!(TokenAmount::mean_rounded(amt("30.00"), 2), Some(amt("15.00")));
        assert_eq!(TokenAmount::mean_rounded(amt("0.05"), 2), Some(amt("0.03")));
        assert_eq!(TokenAmount::mean_rounded(amt("-0.05"), 2), Some(amt("-0.03")));
        assert_eq!(TokenAmount::mean_rounded(amt("1.00"), 0), None);
    }

    #[test]
    fn serde_as_decimal_string() {
        let json = serde_json::to_string(&amt("493.79")).unwrap();
        assert_eq!(json, "\"493.79\"");
        let back: TokenAmount = serde_json::from_str(&json).unwrap();
        assert_eq!(back, amt("493.79"));
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(c in -10_000_000_000i64..10_000_000_000i64) {
            let a = TokenAmount::from_centi(c);
            prop_assert_eq!(a.to_string().parse::<TokenAmount>().unwrap(), a);
        }

        #[test]
        fn split_even_is_exact(c in 0i64..1_000_000_000, n in 1usize..10_000) {
            let parts = TokenAmount::from_centi(c).split_even(n);
            prop_assert_eq!(parts.len(), n);
            prop_assert_eq!(parts.iter().sum::<TokenAmount>().centi(), c);
            let lo = parts.iter().min().unwrap().centi();
            let hi = parts.iter().max().unwrap().centi();
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn split_weighted_is_exact(c in -1_000_000i64..1_000_000, w in proptest::collection::vec(0u64..50, 1..12)) {
            let parts = TokenAmount::from_centi(c).split_weighted(&w);
            prop_assert_eq!(parts.iter().sum::<TokenAmount>().centi(), c);
        }
    }
}
