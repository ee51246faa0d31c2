use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box of admissible settings for the design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "region upper bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::argument("design region needs at least one variable"));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::argument(format!(
                    "region bound {}: need finite lower < upper, got {lo}:{hi}",
                    d + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    /// `copies` independent copies of this box, concatenated. Used as the
    /// search space when optimizing several support points jointly.
    pub fn repeat(&self, copies: usize) -> Self {
        let lower = self.lower.iter().copied().cycle().take(copies * self.dim());
        let upper = self.upper.iter().copied().cycle().take(copies * self.dim());
        Self {
            lower: lower.collect(),
            upper: upper.collect(),
        }
    }
}

impl FromStr for DesignRegion {
    type Err = Error;

    /// Parses `lo1:hi1,lo2:hi2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for part in s.split(',') {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::argument(format!("region `{part}`: expected lo:hi")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::argument(format!("region `{part}`: `{v}` is not a number")))
            };
            lower.push(parse(lo)?);
            upper.push(parse(hi)?);
        }
        Self::new(lower, upper)
    }
}

impl fmt::Display for DesignRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (d, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if d > 0 {
                f.write_str(",")?;
            }
            write!(f, "{lo}:{hi}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_displays() {
        let r: DesignRegion = "100:400,75:350,30:150".parse().unwrap();
        assert_eq!(r.dim(), 3);
        assert_eq!(r.lower(), &[100.0, 75.0, 30.0]);
        assert_eq!(r.to_string(), "100:400,75:350,30:150");
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!("1:0".parse::<DesignRegion>().is_err());
        assert!("1:1".parse::<DesignRegion>().is_err());
        assert!("a:1".parse::<DesignRegion>().is_err());
    }

    #[test]
    fn clamp_and_contains() {
        let r = DesignRegion::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(r.clamp(&[-1.0, 3.0]), vec![0.0, 2.0]);
        assert!(r.contains(&[1.0, 0.0]));
        assert!(!r.contains(&[1.0 + 1e-12, 0.0]));
    }

    #[test]
    fn repeat_concatenates_copies() {
        let r = DesignRegion::new(vec![0.0], vec![1.1]).unwrap().repeat(2);
        assert_eq!(r.lower(), &[0.0, 0.0]);
        assert_eq!(r.upper(), &[1.1, 1.1]);
    }
}
