//! Addition-count accounting for the mutual-information and MMSE
//! evaluations: per-group search versus complete search.
//!
//! Counts are exact big integers; a formatter renders the large ones in the
//! `d.ddddE+ddd` style used when tabulating them.

use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Problem shape for the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub m: u64,
    pub n_t: u64,
    pub n_s: u64,
}

impl CostModel {
    pub fn new(m: u64, n_t: u64, n_s: u64) -> Result<Self> {
        if n_s == 0 || n_t == 0 || n_t % n_s != 0 {
            return Err(Error::GroupSizeMismatch {
                n_s: n_s as usize,
                n_t: n_t as usize,
            });
        }
        Ok(Self { m, n_t, n_s })
    }

    pub fn group_count(&self) -> u64 {
        self.n_t / self.n_s
    }
}

/// Additions for the per-group evaluation: `S * M^(2 N_s)`.
pub fn addition_count(m: u64, n_t: u64, n_s: u64) -> Result<BigUint> {
    let model = CostModel::new(m, n_t, n_s)?;
    Ok(BigUint::from(model.group_count()) * BigUint::from(m).pow(2 * n_s as u32))
}

/// Additions for the complete search: `M^(2 N_t)`.
pub fn complete_count(m: u64, n_t: u64) -> BigUint {
    BigUint::from(m).pow(2 * n_t as u32)
}

/// Renders a count as a plain integer when small, otherwise as
/// `d.ddddE+ddd` with four fractional digits and a three-digit exponent
/// (e.g. `4.2950e+009`).
pub fn format_count(value: &BigUint) -> String {
    let digits = value.to_string();
    if digits.len() <= 6 {
        return digits;
    }
    let exponent = digits.len() - 1;
    let mut mantissa: f64 = digits[..digits.len().min(16)].parse::<f64>().unwrap();
    mantissa /= 10f64.powi((digits.len().min(16) - 1) as i32);
    // Guard against rounding up to 10.0 in the printed mantissa.
    let mut rounded = (mantissa * 10_000.0).round() / 10_000.0;
    let mut exponent = exponent;
    if rounded >= 10.0 {
        rounded /= 10.0;
        exponent += 1;
    }
    format!("{rounded:.4}e+{exponent:03}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(s: &str) -> BigUint {
        s.parse().unwrap()
    }

    #[test]
    fn qpsk_pairs_table() {
        // Per-group counts for QPSK with pairs, and the complete-search row.
        for (n_t, expect) in [(4u64, 512u64), (8, 1024), (16, 2048), (32, 4096)] {
            assert_eq!(addition_count(4, n_t, 2).unwrap(), BigUint::from(expect));
        }
        assert_eq!(complete_count(4, 4), BigUint::from(65536u64));
        assert_eq!(complete_count(4, 8), big("4294967296"));
        assert_eq!(complete_count(4, 16), big("18446744073709551616"));
        assert_eq!(
            complete_count(4, 32),
            big("340282366920938463463374607431768211456")
        );
    }

    #[test]
    fn binary_table() {
        for (n_t, expect) in [(4u64, 32u64), (8, 64), (16, 128), (32, 256)] {
            assert_eq!(addition_count(2, n_t, 2).unwrap(), BigUint::from(expect));
        }
        for (n_t, expect) in [(4u64, 256u64), (8, 512), (16, 1024), (32, 2048)] {
            assert_eq!(addition_count(2, n_t, 4).unwrap(), BigUint::from(expect));
        }
        for (n_t, expect) in [
            (4u64, "256"),
            (8, "65536"),
            (16, "4294967296"),
            (32, "18446744073709551616"),
        ] {
            assert_eq!(addition_count(2, n_t, n_t).unwrap(), big(expect));
        }
    }

    #[test]
    fn full_group_equals_complete_search() {
        for m in [2u64, 4, 16] {
            for n_t in [2u64, 4, 8, 16] {
                assert_eq!(addition_count(m, n_t, n_t).unwrap(), complete_count(m, n_t));
            }
        }
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(addition_count(4, 6, 4).is_err());
        assert!(addition_count(4, 4, 0).is_err());
    }

    #[test]
    fn scientific_rendering() {
        assert_eq!(format_count(&BigUint::from(512u32)), "512");
        assert_eq!(format_count(&BigUint::from(65536u32)), "65536");
        assert_eq!(format_count(&complete_count(2, 16)), "4.2950e+009");
        assert_eq!(format_count(&complete_count(2, 32)), "1.8447e+019");
        assert_eq!(format_count(&complete_count(4, 32)), "3.4028e+038");
        assert_eq!(format_count(&complete_count(16, 32)), "1.1579e+077");
    }
}
