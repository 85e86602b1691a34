//! Summary statistics and agreement analyses.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean and sample standard deviation (`n − 1`); the SD of a single value
/// is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(4);
        write!(f, "{:.p$}±{:.p$}", self.mean, self.sd)
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("paired series of lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < min_len {
        return Err(Error::UndefinedMetric(format!("needs at least {min_len} pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("paired series contain non-finite values".into()));
    }
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of `r = 0` under a t distribution with `n − 2`
    /// degrees of freedom; absent for two points.
    pub p_value: Option<f64>,
}

pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let r = pearson(x, y)?;
    let df = x.len() as f64 - 2.0;
    let p_value = if df < 1.0 {
        None
    } else if r.abs() >= 1.0 {
        Some(0.0)
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::UndefinedMetric(e.to_string()))?;
        Some((2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(Correlation { r, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Mean difference `x − y` with limits of agreement at ±1.96 sample SD.
pub fn bland_altman(x: &[f64], y: &[f64]) -> Result<BlandAltman> {
    check_pair(x, y, 1)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let s = MeanSd::of(&diffs).expect("nonempty");
    Ok(BlandAltman {
        bias: s.mean,
        lo: s.mean - 1.96 * s.sd,
        hi: s.mean + 1.96 * s.sd,
    })
}
