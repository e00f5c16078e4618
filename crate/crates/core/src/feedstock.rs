//! Per-gallon renewable diesel feedstock economics: the LCFS credit
//! advantage from a lower carbon-intensity feedstock and the raw
//! feedstock cost gap.

use serde::{Deserialize, Serialize};

const GRAMS_PER_METRIC_TON: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedstockError {
    #[error("invalid feedstock {name}: {reason}")]
    InvalidProfile { name: String, reason: &'static str },
    #[error("fuel constant {0} must be strictly positive")]
    InvalidConstant(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedstockProfile {
    pub name: String,
    /// g CO2e per MJ.
    pub ci_score: f64,
    /// Dollars per pound.
    pub price: f64,
}

impl FeedstockProfile {
    pub fn new(name: impl Into<String>, ci_score: f64, price: f64) -> Result<Self, FeedstockError> {
        let name = name.into();
        if !(ci_score > 0.0) {
            return Err(FeedstockError::InvalidProfile {
                name,
                reason: "CI score must be positive",
            });
        }
        if !(price >= 0.0) {
            return Err(FeedstockError::InvalidProfile {
                name,
                reason: "price must be nonnegative",
            });
        }
        Ok(Self {
            name,
            ci_score,
            price,
        })
    }

    /// Soybean oil at the midpoint CI score of 55 g/MJ, $0.45/lb.
    pub fn soybean_oil() -> Self {
        Self::new("soybean oil", 55.0, 0.45).expect("valid default")
    }

    /// Yellow grease at the midpoint CI score of 20 g/MJ, $0.37/lb.
    pub fn yellow_grease() -> Self {
        Self::new("yellow grease", 20.0, 0.37).expect("valid default")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelConstants {
    pub mj_per_gallon: f64,
    pub lbs_feedstock_per_gallon: f64,
    /// Dollars per metric ton CO2e.
    pub credit_price: f64,
}

impl Default for FuelConstants {
    fn default() -> Self {
        Self {
            mj_per_gallon: 129.65,
            lbs_feedstock_per_gallon: 8.125,
            credit_price: 59.0,
        }
    }
}

impl FuelConstants {
    pub fn validate(&self) -> Result<(), FeedstockError> {
        for (name, v) in [
            ("mj_per_gallon", self.mj_per_gallon),
            ("lbs_feedstock_per_gallon", self.lbs_feedstock_per_gallon),
            ("credit_price", self.credit_price),
        ] {
            if !(v > 0.0) {
                return Err(FeedstockError::InvalidConstant(name));
            }
        }
        Ok(())
    }
}

/// Intermediate quantities of the credit calculation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditBreakdown {
    pub ci_gap_g_per_mj: f64,
    pub grams_per_gallon: f64,
    pub tons_per_gallon: f64,
    pub dollars_per_gallon: f64,
}

pub fn lcfs_credit_breakdown(
    a: &FeedstockProfile,
    b: &FeedstockProfile,
    k: &FuelConstants,
) -> CreditBreakdown {
    let ci_gap_g_per_mj = a.ci_score - b.ci_score;
    let grams_per_gallon = ci_gap_g_per_mj * k.mj_per_gallon;
    let tons_per_gallon = grams_per_gallon / GRAMS_PER_METRIC_TON;
    CreditBreakdown {
        ci_gap_g_per_mj,
        grams_per_gallon,
        tons_per_gallon,
        dollars_per_gallon: tons_per_gallon * k.credit_price,
    }
}

/// Extra LCFS credit value per gallon from using `b` instead of `a`.
pub fn lcfs_credit_advantage(a: &FeedstockProfile, b: &FeedstockProfile, k: &FuelConstants) -> f64 {
    lcfs_credit_breakdown(a, b, k).dollars_per_gallon
}

/// Feedstock cost saved per gallon by using `b` instead of `a`.
pub fn feedstock_cost_gap(a: &FeedstockProfile, b: &FeedstockProfile, k: &FuelConstants) -> f64 {
    (a.price - b.price) * k.lbs_feedstock_per_gallon
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fs(ci: f64, price: f64) -> FeedstockProfile {
        FeedstockProfile::new("x", ci, price).unwrap()
    }

    #[test]
    fn credit_chain() {
        let k = FuelConstants::default();
        let br = lcfs_credit_breakdown(&fs(55.0, 0.0), &fs(20.0, 0.0), &k);
        assert!((br.grams_per_gallon - 4537.75).abs() < 1e-9);
        assert!((br.tons_per_gallon - 0.00453775).abs() < 1e-15);
        assert!((br.dollars_per_gallon - 0.26772725).abs() < 1e-12);
    }

    #[test]
    fn credit_linear_and_zero_for_equal_ci() {
        let k = FuelConstants::default();
        let (a, b) = (fs(55.0, 0.0), fs(20.0, 0.0));
        assert_eq!(lcfs_credit_advantage(&a, &a, &k), 0.0);
        let k2 = FuelConstants {
            credit_price: 2.0 * k.credit_price,
            ..k
        };
        assert!(
            (lcfs_credit_advantage(&a, &b, &k2) - 2.0 * lcfs_credit_advantage(&a, &b, &k)).abs()
                < 1e-15
        );
    }

    #[test]
    fn cost_gap_examples() {
        let k = FuelConstants::default();
        let gap = feedstock_cost_gap(
            &FeedstockProfile::soybean_oil(),
            &FeedstockProfile::yellow_grease(),
            &k,
        );
        assert!((gap - 0.65).abs() < 1e-12);
        assert_eq!(feedstock_cost_gap(&fs(1.0, 0.4), &fs(2.0, 0.4), &k), 0.0);
        let half = feedstock_cost_gap(&fs(1.0, 0.41), &fs(1.0, 0.37), &k);
        assert!((half - gap / 2.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(FeedstockProfile::new("x", 0.0, 1.0).is_err());
        assert!(FeedstockProfile::new("x", 10.0, -1.0).is_err());
        let bad = FuelConstants {
            mj_per_gallon: 0.0,
            ..FuelConstants::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn antisymmetric(ca in 1.0f64..100.0, cb in 1.0f64..100.0, pa in 0.0f64..2.0, pb in 0.0f64..2.0) {
            let k = FuelConstants::default();
            let (a, b) = (fs(ca, pa), fs(cb, pb));
            prop_assert!((lcfs_credit_advantage(&a, &b, &k) + lcfs_credit_advantage(&b, &a, &k)).abs() < 1e-12);
            prop_assert!((feedstock_cost_gap(&a, &b, &k) + feedstock_cost_gap(&b, &a, &k)).abs() < 1e-12);
        }
    }
}
