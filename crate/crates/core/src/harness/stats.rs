//! Order statistics of per-run maximum accuracies. Quantiles use linear
//! interpolation between order statistics (Hyndman–Fan type 7): for sorted
//! `x[0..n]`, `Q(p) = x[⌊h⌋] + (h − ⌊h⌋)(x[⌊h⌋+1] − x[⌊h⌋])` with `h = (n − 1)p`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const QUANTILE_RULE: &str = "linear interpolation between order statistics (type 7)";

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Statistics("no values".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Statistics("NaN among values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Statistics(format!(
            "quantile level {p} outside [0, 1]"
        )));
    }
    Ok(type7(&sorted(values)?, p))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// First, second and third quartiles; needs at least four values.
pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.len() < 4 {
        return Err(Error::Statistics(format!(
            "quartiles need at least 4 values, got {}",
            values.len()
        )));
    }
    let s = sorted(values)?;
    Ok(Quartiles {
        q1: type7(&s, 0.25),
        q2: type7(&s, 0.5),
        q3: type7(&s, 0.75),
    })
}
