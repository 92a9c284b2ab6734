//! Sample extremograms of a single series over lags and quantile levels.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::numeric::{quantile_type1, sorted};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    /// `P(X_{t+h} > q | X_t > q)` estimated by a ratio of counts.
    #[default]
    Ratio,
    /// Covariance of the exceedance indicators at lag `h`.
    Covariance,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ratio => "ratio",
            Variant::Covariance => "covariance",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(Variant::Ratio),
            "covariance" => Ok(Variant::Covariance),
            other => Err(invalid(format!("unknown extremogram variant '{other}'"))),
        }
    }
}

/// A single extremogram value with its conditioning count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremogramValue {
    pub value: f64,
    /// Number of `t <= n - h` with `X_t > q`.
    pub exceedance_count: usize,
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.iter().any(|x| !x.is_finite()) {
        return Err(invalid("series contains non-finite values"));
    }
    if series.windows(2).all(|w| w[0] == w[1]) {
        return Err(invalid("series is constant"));
    }
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!(
            "quantile level {level} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Exceedance indicators of `series` above its type-1 quantile at `level`.
fn exceedances(series: &[f64], level: f64) -> Result<Vec<bool>> {
    let q = quantile_type1(&sorted(series), level)?;
    Ok(series.iter().map(|&x| x > q).collect())
}

fn value_at(ind: &[bool], lag: usize, variant: Variant) -> Result<ExtremogramValue> {
    let n = ind.len();
    let m = n - lag;
    let mut cond = 0usize;
    let mut joint = 0usize;
    for t in 0..m {
        if ind[t] {
            cond += 1;
            if ind[t + lag] {
                joint += 1;
            }
        }
    }
    if cond == 0 {
        return Err(degenerate("empty conditioning set"));
    }
    let value = match variant {
        Variant::Ratio => joint as f64 / cond as f64,
        Variant::Covariance => {
            let p = ind.iter().filter(|&&b| b).count() as f64 / n as f64;
            joint as f64 / m as f64 - p * p
        }
    };
    Ok(ExtremogramValue {
        value,
        exceedance_count: cond,
    })
}

/// Sample extremogram at one level and lag. Exceedance is strict, `X_t > q`.
pub fn extremogram(
    series: &[f64],
    level: f64,
    lag: usize,
    variant: Variant,
) -> Result<ExtremogramValue> {
    if lag >= series.len() {
        return Err(invalid(format!(
            "lag {lag} must be below the series length {}",
            series.len()
        )));
    }
    check_level(level)?;
    check_series(series)?;
    value_at(&exceedances(series, level)?, lag, variant)
}

/// Extremogram values on a level × lag grid. Cells with no exceedances are
/// `None` rather than fabricated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremogramMatrix {
    pub levels: Vec<f64>,
    pub max_lag: usize,
    pub variant: Variant,
    /// Row per level, column per lag `1..=max_lag`.
    pub cells: Vec<Vec<Option<ExtremogramValue>>>,
}

impl ExtremogramMatrix {
    pub fn get(&self, level_index: usize, lag: usize) -> Option<f64> {
        self.cells[level_index][lag - 1].map(|c| c.value)
    }

    pub fn empty_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// CSV rows `level,lag,value,variant,exceedance_count`; empty cells have a
    /// blank value and a zero count.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "lag", "value", "variant", "exceedance_count"])?;
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let (value, count) = match cell {
                    Some(c) => (format!("{:?}", c.value), c.exceedance_count),
                    None => (String::new(), 0),
                };
                w.write_record([
                    format!("{:?}", self.levels[i]),
                    (j + 1).to_string(),
                    value,
                    self.variant.to_string(),
                    count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Levels `0.01, 0.02, ..., 0.99`.
pub fn default_levels() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

pub const DEFAULT_MAX_LAG: usize = 124;

/// Extremogram over every level and lags `1..=max_lag`.
pub fn extremogram_matrix(
    series: &[f64],
    levels: &[f64],
    max_lag: usize,
    variant: Variant,
) -> Result<ExtremogramMatrix> {
    if levels.is_empty() {
        return Err(invalid("no quantile levels given"));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("quantile levels must be strictly increasing"));
    }
    levels.iter().try_for_each(|&l| check_level(l))?;
    if max_lag == 0 || max_lag >= series.len() {
        return Err(invalid(format!(
            "max lag {max_lag} must be in 1..{}",
            series.len()
        )));
    }
    check_series(series)?;
    let rows = par::map_slice(levels, |&level| -> Result<Vec<Option<ExtremogramValue>>> {
        let ind = exceedances(series, level)?;
        Ok((1..=max_lag)
            .map(|h| value_at(&ind, h, variant).ok())
            .collect())
    });
    let cells = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let m = ExtremogramMatrix {
        levels: levels.to_vec(),
        max_lag,
        variant,
        cells,
    };
    if m.empty_cells() == levels.len() * max_lag {
        return Err(degenerate(
            "every extremogram cell has an empty conditioning set",
        ));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_zero_ratio_is_one() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        assert_eq!(extremogram(&x, 0.5, 0, Variant::Ratio).unwrap().value, 1.0);
    }

    #[test]
    fn rejects_constant_and_bad_lag() {
        assert!(extremogram(&[2.0; 5], 0.5, 1, Variant::Ratio).is_err());
        assert!(extremogram(&[1.0, 2.0], 0.5, 2, Variant::Ratio).is_err());
        assert!(extremogram(&[1.0, 2.0], 1.0, 0, Variant::Ratio).is_err());
    }

    #[test]
    fn empty_conditioning_set() {
        // Level 0.99 of 1..5 is the maximum; nothing strictly exceeds it.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(extremogram(&x, 0.99, 1, Variant::Ratio).is_err());
        let m = extremogram_matrix(&x, &[0.5, 0.99], 2, Variant::Ratio).unwrap();
        // At level 0.5 only t = 4, 5 exceed, so lag 2 has no conditioning point.
        assert_eq!(m.get(0, 1), Some(1.0));
        assert_eq!(m.get(0, 2), None);
        assert_eq!(m.get(1, 1), None);
        assert_eq!(m.empty_cells(), 3);
    }

    #[test]
    fn covariance_hand_value() {
        // Exceedances above the median 2 of (1,3,1,3,2): t = 2, 4 (1-based).
        let x = [1.0, 3.0, 1.0, 3.0, 2.0];
        let v = extremogram(&x, 0.5, 2, Variant::Covariance).unwrap();
        // Pairs (t, t+2), t = 1..3: only (2, 4) jointly exceeds.
        assert!((v.value - (1.0 / 3.0 - 0.16)).abs() < 1e-12);
        assert_eq!(v.exceedance_count, 1);
    }
}
