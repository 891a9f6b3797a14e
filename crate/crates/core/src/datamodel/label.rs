use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the concentrations the classifier accepts.
pub const DOMAIN_MAX_MG_PER_L: f64 = 20_000.0;
/// Highest concentration represented in the training samples.
pub const CHARACTERIZED_MAX_MG_PER_L: f64 = 6_000.0;

const LOW_MEDIUM_THRESHOLD: f64 = 75.0;
const MEDIUM_HIGH_THRESHOLD: f64 = 450.0;

/// Pollution level by total suspended solids.
///
/// Class order throughout the crate (network outputs, matrices, reports) is
/// high, medium, low; `index()` follows that order and `code()` is the
/// 1-based label number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    High,
    Medium,
    Low,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::High, ClassLabel::Medium, ClassLabel::Low];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::High => 0,
            ClassLabel::Medium => 1,
            ClassLabel::Low => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::High => "high",
            ClassLabel::Medium => "medium",
            ClassLabel::Low => "low",
        }
    }

    /// Concentration range (mg/L, inclusive) of the prepared samples in this class.
    /// Synthetic data draws from these ranges.
    pub fn sample_range(self) -> (f64, f64) {
        match self {
            ClassLabel::High => (500.0, 6000.0),
            ClassLabel::Medium => (80.0, 400.0),
            ClassLabel::Low => (40.0, 70.0),
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "1" => Ok(ClassLabel::High),
            "medium" | "2" => Ok(ClassLabel::Medium),
            "low" | "3" => Ok(ClassLabel::Low),
            other => Err(Error::param("class", format!("unknown class `{other}`"))),
        }
    }
}

/// Maps a TSS concentration to its class.
///
/// The prepared samples leave gaps at (70, 80) and (400, 500) mg/L; these are
/// split at the midpoints, 75 and 450, with the threshold itself belonging to
/// the lower-concentration class.
pub fn label_from_concentration(mg_per_l: f64) -> Result<ClassLabel> {
    if !(mg_per_l > 0.0 && mg_per_l <= DOMAIN_MAX_MG_PER_L) {
        return Err(Error::OutOfDomain(mg_per_l));
    }
    Ok(if mg_per_l <= LOW_MEDIUM_THRESHOLD {
        ClassLabel::Low
    } else if mg_per_l <= MEDIUM_HIGH_THRESHOLD {
        ClassLabel::Medium
    } else {
        ClassLabel::High
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_ranges_map_to_their_class() {
        assert_eq!(label_from_concentration(40.0).unwrap(), ClassLabel::Low);
        assert_eq!(label_from_concentration(250.0).unwrap(), ClassLabel::Medium);
        assert_eq!(label_from_concentration(6000.0).unwrap(), ClassLabel::High);
        for c in ClassLabel::ALL {
            let (lo, hi) = c.sample_range();
            assert_eq!(label_from_concentration(lo).unwrap(), c);
            assert_eq!(label_from_concentration(hi).unwrap(), c);
        }
    }

    #[test]
    fn midpoint_boundaries() {
        assert_eq!(label_from_concentration(75.0).unwrap(), ClassLabel::Low);
        assert_eq!(label_from_concentration(75.000001).unwrap(), ClassLabel::Medium);
        assert_eq!(label_from_concentration(450.0).unwrap(), ClassLabel::Medium);
        assert_eq!(label_from_concentration(450.000001).unwrap(), ClassLabel::High);
        assert_eq!(label_from_concentration(20000.0).unwrap(), ClassLabel::High);
    }

    #[test]
    fn out_of_domain() {
        for c in [0.0, -1.0, 20000.5, f64::NAN, f64::INFINITY] {
            assert!(matches!(label_from_concentration(c), Err(Error::OutOfDomain(_))));
        }
    }

    #[test]
    fn codes_and_names() {
        assert_eq!(ClassLabel::High.code(), 1);
        assert_eq!(ClassLabel::Medium.code(), 2);
        assert_eq!(ClassLabel::Low.code(), 3);
        for c in ClassLabel::ALL {
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), c);
            assert_eq!(ClassLabel::from_index(c.index()), Some(c));
        }
    }

    proptest! {
        #[test]
        fn mapping_is_monotone(a in 1e-6f64..20000.0, b in 1e-6f64..20000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let cl = label_from_concentration(lo).unwrap();
            let ch = label_from_concentration(hi).unwrap();
            prop_assert!(cl.code() >= ch.code());
        }
    }
}
