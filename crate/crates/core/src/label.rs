//! Class labels and two-class probability vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary news label. Canonical index: real = 0, fake = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Real,
    Fake,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Real, ClassLabel::Fake];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Real => 0,
            ClassLabel::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Real),
            1 => Some(ClassLabel::Fake),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Real => "real",
            ClassLabel::Fake => "fake",
        }
    }

    pub fn other(self) -> Self {
        match self {
            ClassLabel::Real => ClassLabel::Fake,
            ClassLabel::Fake => ClassLabel::Real,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "real" => Ok(ClassLabel::Real),
            "fake" => Ok(ClassLabel::Fake),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Tolerance used when validating that a pair sums to one.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Two-class probability vector `(p_real, p_fake)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub p_real: f64,
    pub p_fake: f64,
}

impl ProbPair {
    pub const NEUTRAL: ProbPair = ProbPair {
        p_real: 0.5,
        p_fake: 0.5,
    };

    pub fn new(p_real: f64, p_fake: f64) -> Self {
        ProbPair { p_real, p_fake }
    }

    /// Pair with `p_fake = 1 - p_real`.
    pub fn from_real(p_real: f64) -> Self {
        ProbPair {
            p_real,
            p_fake: 1.0 - p_real,
        }
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        match label {
            ClassLabel::Real => self.p_real,
            ClassLabel::Fake => self.p_fake,
        }
    }

    pub fn sum(&self) -> f64 {
        self.p_real + self.p_fake
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        (0.0..=1.0).contains(&self.p_real)
            && (0.0..=1.0).contains(&self.p_fake)
            && (self.sum() - 1.0).abs() <= tol
    }

    /// Argmax with ties going to real.
    pub fn argmax(&self) -> ClassLabel {
        if self.p_real >= self.p_fake {
            ClassLabel::Real
        } else {
            ClassLabel::Fake
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.p_real, self.p_fake]
    }
}

impl From<[f64; 2]> for ProbPair {
    fn from(a: [f64; 2]) -> Self {
        ProbPair::new(a[0], a[1])
    }
}

/// Mean of a non-empty set of pairs, component-wise.
pub fn mean_pair<'a>(pairs: impl IntoIterator<Item = &'a ProbPair>) -> Option<ProbPair> {
    let mut n = 0usize;
    let (mut r, mut f) = (0.0, 0.0);
    for p in pairs {
        r += p.p_real;
        f += p.p_fake;
        n += 1;
    }
    (n > 0).then(|| ProbPair::new(r / n as f64, f / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_text_round_trip() {
        for l in ClassLabel::ALL {
            assert_eq!(l.as_str().parse::<ClassLabel>().unwrap(), l);
            assert_eq!(ClassLabel::from_index(l.index()), Some(l));
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<ClassLabel>(&json).unwrap(), l);
        }
        assert!("REAL".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn argmax_tie_is_real() {
        assert_eq!(ProbPair::NEUTRAL.argmax(), ClassLabel::Real);
        assert_eq!(ProbPair::new(0.2, 0.8).argmax(), ClassLabel::Fake);
    }

    #[test]
    fn mean_of_pairs() {
        let m = mean_pair(&[ProbPair::new(0.6, 0.4), ProbPair::new(0.2, 0.8)]).unwrap();
        assert!((m.p_real - 0.4).abs() < 1e-15);
        assert!((m.p_fake - 0.6).abs() < 1e-15);
        assert!(mean_pair(&[]).is_none());
    }
}
