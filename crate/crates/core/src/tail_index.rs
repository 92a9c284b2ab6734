//! Marginal tail-index estimators.
//!
//! The Hill family works with the inverse index `ξ` from upper order
//! statistics; the rank-plot, likelihood and percentile estimators return the
//! tail exponent `α = 1/ξ` directly. The empirical characteristic function
//! regression estimates `α` from the behaviour of `1 - Re φ(t)` near the
//! origin.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::numeric::{ols, quantile_type7, LineFit};
use crate::par;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// A positive sample sorted increasingly, with order-statistic access.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSample {
    values: Vec<f64>,
}

impl OrderedSample {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("sample is empty"));
        }
        if values.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(invalid("tail estimation needs finite positive losses"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self { values: v })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ascending(&self) -> &[f64] {
        &self.values
    }

    /// `X_(i,n)`, the i-th smallest value (1-based).
    pub fn lower(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// `X^(i,n)`, the i-th largest value (1-based).
    pub fn upper(&self, i: usize) -> f64 {
        self.values[self.values.len() - i]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    /// A copy with every value multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid("scale factor must be positive"));
        }
        Ok(Self {
            values: self.values.iter().map(|x| x * c).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Hill,
    SmoothedHill,
    TrimmedHill,
    TrimmedHillOptimal,
    Mle,
    MleUnbiased,
    LeastSquares,
    WeightedLeastSquares,
    Percentile,
    /// Percentile method with a configurable quantile pair (experimental).
    PercentilePair,
    EcfRegression,
    ParetoQq,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hill => "hill",
            Method::SmoothedHill => "smoothed-hill",
            Method::TrimmedHill => "trimmed-hill",
            Method::TrimmedHillOptimal => "trimmed-hill-opt",
            Method::Mle => "mle",
            Method::MleUnbiased => "mle-unbiased",
            Method::LeastSquares => "ls",
            Method::WeightedLeastSquares => "wls",
            Method::Percentile => "pm",
            Method::PercentilePair => "pm-pair",
            Method::EcfRegression => "ecf",
            Method::ParetoQq => "pareto-qq",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimateFlag {
    /// All order statistics used were equal; `ξ = 0` and `α` is undefined.
    Degenerate,
    /// The requested `(k0, k)` pair violates `0 <= k0 < k < n - 1`.
    Infeasible,
    /// Tied losses were separated by the smallest relative jitter.
    TiesJittered,
    Experimental,
}

impl EstimateFlag {
    pub fn name(self) -> &'static str {
        match self {
            EstimateFlag::Degenerate => "degenerate",
            EstimateFlag::Infeasible => "infeasible",
            EstimateFlag::TiesJittered => "ties-jittered",
            EstimateFlag::Experimental => "experimental",
        }
    }
}

/// A tail-index point estimate with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailIndexEstimate {
    pub method: Method,
    /// Tail exponent `α`.
    pub alpha_hat: Option<f64>,
    /// Inverse tail index `ξ = 1/α`.
    pub xi_hat: Option<f64>,
    /// Threshold or `x_min` used, in loss units.
    pub scale: Option<f64>,
    pub k: Option<usize>,
    pub k0: Option<usize>,
    pub std_error: Option<f64>,
    pub flags: Vec<EstimateFlag>,
}

impl TailIndexEstimate {
    fn from_xi(method: Method, xi: f64) -> Self {
        let mut flags = Vec::new();
        let alpha = if xi > 0.0 {
            Some(1.0 / xi)
        } else {
            flags.push(EstimateFlag::Degenerate);
            None
        };
        Self {
            method,
            alpha_hat: alpha,
            xi_hat: Some(xi),
            scale: None,
            k: None,
            k0: None,
            std_error: None,
            flags,
        }
    }

    fn from_alpha(method: Method, alpha: f64) -> Self {
        Self {
            method,
            alpha_hat: Some(alpha),
            xi_hat: (alpha != 0.0).then(|| 1.0 / alpha),
            scale: None,
            k: None,
            k0: None,
            std_error: None,
            flags: Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: EstimateFlag) -> bool {
        self.flags.contains(&flag)
    }
}

fn check_hill_k(sample: &OrderedSample, k: usize) -> Result<()> {
    if k < 2 || k >= sample.len() {
        return Err(invalid(format!(
            "hill needs 2 <= k < n (k = {k}, n = {})",
            sample.len()
        )));
    }
    Ok(())
}

/// Hill estimator of `ξ` from the `k` largest values above `X^(k+1,n)`:
/// `ξ = (1/k) Σ_{i=1..k} ln(X^(i,n) / X^(k+1,n))`.
pub fn hill(sample: &OrderedSample, k: usize) -> Result<TailIndexEstimate> {
    check_hill_k(sample, k)?;
    let threshold = sample.upper(k + 1);
    let xi = (1..=k)
        .map(|i| (sample.upper(i) / threshold).ln())
        .sum::<f64>()
        / k as f64;
    let mut e = TailIndexEstimate::from_xi(Method::Hill, xi);
    e.k = Some(k);
    e.scale = Some(threshold);
    e.std_error = Some(xi / (k as f64).sqrt());
    Ok(e)
}

/// Hill values `H_{j,n}` for `j = 1..=j_max` via prefix sums of log order
/// statistics. Index 0 of the result is `H_{1,n}`.
fn hill_sequence(sample: &OrderedSample, j_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(j_max);
    let mut log_sum = 0.0;
    for j in 1..=j_max {
        log_sum += sample.upper(j).ln();
        out.push(log_sum / j as f64 - sample.upper(j + 1).ln());
    }
    out
}

/// Smoothed Hill estimator `(1/((r-1)k)) Σ_{j=k+1..rk} H_{j,n}`.
pub fn smoothed_hill(sample: &OrderedSample, k: usize, r: usize) -> Result<TailIndexEstimate> {
    if k < 2 || r < 2 {
        return Err(invalid("smoothed hill needs k >= 2 and r >= 2"));
    }
    let top = r
        .checked_mul(k)
        .filter(|&rk| rk < sample.len())
        .ok_or_else(|| {
            invalid(format!(
                "smoothed hill needs r*k < n (r = {r}, k = {k}, n = {})",
                sample.len()
            ))
        })?;
    let h = hill_sequence(sample, top);
    let xi = h[k..top].iter().sum::<f64>() / ((r - 1) * k) as f64;
    let mut e = TailIndexEstimate::from_xi(Method::SmoothedHill, xi);
    e.k = Some(k);
    Ok(e)
}

/// One point of a Hill plot with its symmetric 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillPoint {
    pub k: usize,
    pub xi: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Hill values for `k_min..=k_max`, with standard error `ξ/√k`.
pub fn hill_plot_data(
    sample: &OrderedSample,
    k_min: usize,
    k_max: usize,
) -> Result<Vec<HillPoint>> {
    if k_min < 2 || k_min >= k_max || k_max >= sample.len() {
        return Err(invalid(format!(
            "hill plot needs 2 <= k_min < k_max < n (got {k_min}, {k_max}, n = {})",
            sample.len()
        )));
    }
    (k_min..=k_max)
        .map(|k| {
            let e = hill(sample, k)?;
            let xi = e.xi_hat.expect("hill always reports xi");
            let half = Z_95 * xi / (k as f64).sqrt();
            Ok(HillPoint {
                k,
                xi,
                ci_low: xi - half,
                ci_high: xi + half,
            })
        })
        .collect()
}

fn check_trim(sample: &OrderedSample, k0: usize, k: usize) -> Result<()> {
    if !(k0 < k && k + 1 < sample.len()) {
        return Err(invalid(format!(
            "trimmed hill needs 0 <= k0 < k < n - 1 (k0 = {k0}, k = {k}, n = {})",
            sample.len()
        )));
    }
    Ok(())
}

/// Weighted trimmed Hill estimator
/// `Σ_{i=k0+1..k} w(i) ln(X_(n-i+1,n) / X_(n-k,n))`; `weights[j]` is `w(k0+1+j)`.
pub fn trimmed_hill(
    sample: &OrderedSample,
    k0: usize,
    k: usize,
    weights: &[f64],
) -> Result<TailIndexEstimate> {
    check_trim(sample, k0, k)?;
    if weights.len() != k - k0 {
        return Err(invalid(format!(
            "expected {} weights for i = k0+1..k, got {}",
            k - k0,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(invalid("trimmed hill weights must be non-negative"));
    }
    let threshold = sample.upper(k + 1);
    let xi = weights
        .iter()
        .enumerate()
        .map(|(j, w)| w * (sample.upper(k0 + 1 + j) / threshold).ln())
        .sum::<f64>();
    let mut e = TailIndexEstimate::from_xi(Method::TrimmedHill, xi);
    e.k = Some(k);
    e.k0 = Some(k0);
    e.scale = Some(threshold);
    Ok(e)
}

/// Trimmed Hill estimator with the optimal (best linear unbiased) weights:
/// `((k0+1)/(k-k0)) ln(X_(n-k0,n)/X_(n-k,n)) + (1/(k-k0)) Σ_{i=k0+2..k} ln(X_(n-i+1,n)/X_(n-k,n))`.
///
/// The top `k0` order statistics do not enter, so any corruption of them
/// leaves the estimate unchanged.
pub fn trimmed_hill_optimal(
    sample: &OrderedSample,
    k0: usize,
    k: usize,
) -> Result<TailIndexEstimate> {
    check_trim(sample, k0, k)?;
    let threshold = sample.upper(k + 1);
    let m = (k - k0) as f64;
    let lead = (k0 + 1) as f64 / m * (sample.upper(k0 + 1) / threshold).ln();
    let rest = ((k0 + 2)..=k)
        .map(|i| (sample.upper(i) / threshold).ln())
        .sum::<f64>()
        / m;
    let xi = lead + rest;
    let mut e = TailIndexEstimate::from_xi(Method::TrimmedHillOptimal, xi);
    e.k = Some(k);
    e.k0 = Some(k0);
    e.scale = Some(threshold);
    e.std_error = Some(xi / m.sqrt());
    Ok(e)
}

/// One cell of a trimmed-Hill sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k0: usize,
    pub k: usize,
    /// `None` when the pair is infeasible.
    pub estimate: Option<TailIndexEstimate>,
}

impl SweepCell {
    pub fn feasible(&self) -> bool {
        self.estimate.is_some()
    }

    /// The estimate, or an infeasible placeholder row.
    pub fn as_estimate(&self) -> TailIndexEstimate {
        self.estimate.clone().unwrap_or_else(|| TailIndexEstimate {
            method: Method::TrimmedHillOptimal,
            alpha_hat: None,
            xi_hat: None,
            scale: None,
            k: Some(self.k),
            k0: Some(self.k0),
            std_error: None,
            flags: vec![EstimateFlag::Infeasible],
        })
    }
}

/// Optimal trimmed Hill over every `(k0, k)` combination, `k0`-major.
/// Infeasible pairs are kept as flagged cells.
pub fn trimmed_hill_sweep(
    sample: &OrderedSample,
    k0_values: &[usize],
    k_values: &[usize],
) -> Result<Vec<SweepCell>> {
    let pairs: Vec<(usize, usize)> = k0_values
        .iter()
        .flat_map(|&k0| k_values.iter().map(move |&k| (k0, k)))
        .collect();
    let cells = par::map_slice(&pairs, |&(k0, k)| SweepCell {
        k0,
        k,
        estimate: trimmed_hill_optimal(sample, k0, k).ok(),
    });
    if !cells.iter().any(SweepCell::feasible) {
        return Err(invalid("no feasible (k0, k) pair in the sweep grid"));
    }
    Ok(cells)
}

/// Pareto maximum likelihood and its small-sample correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoMle {
    pub alpha_hat: f64,
    /// `((n-2)/n) α̂`.
    pub alpha_unbiased: f64,
    pub x_min: f64,
}

impl ParetoMle {
    pub fn estimate(&self, unbiased: bool) -> TailIndexEstimate {
        let (m, a) = if unbiased {
            (Method::MleUnbiased, self.alpha_unbiased)
        } else {
            (Method::Mle, self.alpha_hat)
        };
        let mut e = TailIndexEstimate::from_alpha(m, a);
        e.scale = Some(self.x_min);
        e
    }
}

/// Pareto MLE `α̂ = n / Σ ln(x_i / x_min)`.
pub fn mle_pareto(sample: &OrderedSample, x_min: f64) -> Result<ParetoMle> {
    let n = sample.len();
    if n < 3 {
        return Err(invalid("pareto mle needs n >= 3"));
    }
    if !(x_min.is_finite() && x_min > 0.0) || sample.min() < x_min {
        return Err(invalid("pareto mle needs 0 < x_min <= every observation"));
    }
    let log_sum: f64 = sample.ascending().iter().map(|x| (x / x_min).ln()).sum();
    if log_sum <= 0.0 {
        return Err(degenerate(
            "degenerate at threshold: every observation equals x_min",
        ));
    }
    let alpha_hat = n as f64 / log_sum;
    Ok(ParetoMle {
        alpha_hat,
        alpha_unbiased: (n as f64 - 2.0) / n as f64 * alpha_hat,
        x_min,
    })
}

/// Replace ties in an increasing sequence by the next representable value.
fn jitter_ties(sorted: &[f64]) -> (Vec<f64>, bool) {
    let mut v = sorted.to_vec();
    let mut jittered = false;
    for i in 1..v.len() {
        if v[i] <= v[i - 1] {
            v[i] = v[i - 1].next_up();
            jittered = true;
        }
    }
    (v, jittered)
}

/// Least-squares rank-plot estimator: regress `ln((n - i + 0.5)/n)` on
/// `ln x_(i)` and report the negated slope.
pub fn ls_estimator(sample: &OrderedSample) -> Result<TailIndexEstimate> {
    let n = sample.len();
    if n < 3 {
        return Err(invalid("least squares needs n >= 3"));
    }
    if sample.min() == sample.upper(1) {
        return Err(degenerate("all values equal: zero-variance regressor"));
    }
    let (x, jittered) = jitter_ties(sample.ascending());
    let logx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = (1..=n)
        .map(|i| ((n - i) as f64 + 0.5).ln() - (n as f64).ln())
        .collect();
    let fit = ols(&logx, &y)?;
    let mut e = TailIndexEstimate::from_alpha(Method::LeastSquares, -fit.slope);
    e.std_error = Some(fit.slope_std_error);
    if jittered {
        e.flags.push(EstimateFlag::TiesJittered);
    }
    Ok(e)
}

/// Weighted least-squares estimator
/// `α̂ = -Σ_{i=1..n} ln((n+1-i)/n) / Σ_{i=1..n} ln(x_i / x_min)`.
pub fn wls_estimator(sample: &OrderedSample, x_min: f64) -> Result<TailIndexEstimate> {
    let n = sample.len();
    if n < 2 {
        return Err(invalid("weighted least squares needs n >= 2"));
    }
    if !(x_min.is_finite() && x_min > 0.0) || sample.min() < x_min {
        return Err(invalid("wls needs 0 < x_min <= every observation"));
    }
    let nf = n as f64;
    let num: f64 = -(1..=n)
        .map(|i| (((n + 1 - i) as f64) / nf).ln())
        .sum::<f64>();
    let den: f64 = sample.ascending().iter().map(|x| (x / x_min).ln()).sum();
    if den <= 0.0 {
        return Err(degenerate(
            "zero denominator: every observation equals x_min",
        ));
    }
    let mut e = TailIndexEstimate::from_alpha(Method::WeightedLeastSquares, num / den);
    e.scale = Some(x_min);
    if sample.ascending().windows(2).any(|w| w[0] == w[1]) {
        // The numerator depends on ranks only, so ties do not change the value.
        e.flags.push(EstimateFlag::TiesJittered);
    }
    Ok(e)
}

fn percentile_ratio(sample: &OrderedSample, p_lo: f64, p_hi: f64) -> Result<f64> {
    if sample.len() < 4 {
        return Err(invalid("percentile estimators need n >= 4"));
    }
    if !(0.0 < p_lo && p_lo < p_hi && p_hi < 1.0) {
        return Err(invalid(
            "percentile levels must satisfy 0 < p_lo < p_hi < 1",
        ));
    }
    let lo = quantile_type7(sample.ascending(), p_lo)?;
    let hi = quantile_type7(sample.ascending(), p_hi)?;
    if hi <= lo {
        return Err(degenerate("upper and lower percentiles coincide"));
    }
    Ok(((1.0 - p_lo) / (1.0 - p_hi)).ln() / (hi.ln() - lo.ln()))
}

/// Percentile method `ln 3 / (ln P75 - ln P25)` (linear-interpolation percentiles).
pub fn pm_estimator(sample: &OrderedSample) -> Result<TailIndexEstimate> {
    Ok(TailIndexEstimate::from_alpha(
        Method::Percentile,
        percentile_ratio(sample, 0.25, 0.75)?,
    ))
}

/// Percentile-pair generalisation `ln((1-p_lo)/(1-p_hi)) / (ln P_hi - ln P_lo)`,
/// exact for Pareto quantiles. Flagged experimental.
pub fn percentile_pair_estimator(
    sample: &OrderedSample,
    p_lo: f64,
    p_hi: f64,
) -> Result<TailIndexEstimate> {
    let mut e = TailIndexEstimate::from_alpha(
        Method::PercentilePair,
        percentile_ratio(sample, p_lo, p_hi)?,
    );
    e.flags.push(EstimateFlag::Experimental);
    Ok(e)
}

/// Real part of the empirical characteristic function, `(1/n) Σ cos(t x_j)`.
pub fn ecf_real(sample: &[f64], t: f64) -> f64 {
    sample.iter().map(|x| (t * x).cos()).sum::<f64>() / sample.len() as f64
}

/// Grid for the characteristic-function regression: `m = ceil(n^δ)` points
/// `t_j = j / √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcfRegressionConfig {
    pub delta: f64,
}

impl Default for EcfRegressionConfig {
    fn default() -> Self {
        Self { delta: 0.45 }
    }
}

impl EcfRegressionConfig {
    pub fn grid(&self, n: usize) -> Result<Vec<f64>> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(invalid(format!(
                "grid exponent delta = {} must be in (0, 1/2)",
                self.delta
            )));
        }
        let m = (n as f64).powf(self.delta).ceil() as usize;
        if m < 2 {
            return Err(invalid("ECF grid needs m >= 2 points"));
        }
        let root_n = (n as f64).sqrt();
        Ok((1..=m).map(|j| j as f64 / root_n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfFit {
    pub alpha_hat: f64,
    /// OLS slope standard error; `NaN` with exactly two usable points.
    pub std_error: f64,
    pub intercept: f64,
    pub grid_size: usize,
    pub points_used: usize,
}

impl EcfFit {
    pub fn estimate(&self) -> TailIndexEstimate {
        let mut e = TailIndexEstimate::from_alpha(Method::EcfRegression, self.alpha_hat);
        e.std_error = self.std_error.is_finite().then_some(self.std_error);
        e
    }
}

/// Regress `ln(1 - U_n(t_j))` on `ln t_j`; the slope estimates `α`. Grid
/// points with `1 - U_n(t_j) <= 0` are dropped.
pub fn ecf_regression(sample: &OrderedSample, config: &EcfRegressionConfig) -> Result<EcfFit> {
    let grid = config.grid(sample.len())?;
    let values = sample.ascending();
    let points: Vec<(f64, f64)> = par::map_slice(&grid, |&t| (t, 1.0 - ecf_real(values, t)))
        .into_iter()
        .filter(|&(_, g)| g > 0.0)
        .map(|(t, g)| (t.ln(), g.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Degenerate(
            "insufficient ECF grid: fewer than 2 usable points".into(),
        ));
    }
    let z: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = ols(&z, &y)?;
    Ok(EcfFit {
        alpha_hat: fit.slope,
        std_error: fit.slope_std_error,
        intercept: fit.intercept,
        grid_size: grid.len(),
        points_used: points.len(),
    })
}

/// Pareto QQ points `(-ln(1 - i/(n+1)), ln X_(i,n))`.
pub fn pareto_qq(sample: &OrderedSample) -> Result<Vec<(f64, f64)>> {
    let n = sample.len();
    if n < 2 {
        return Err(invalid("pareto QQ plot needs n >= 2"));
    }
    Ok((1..=n)
        .map(|i| {
            (
                -(1.0 - i as f64 / (n + 1) as f64).ln(),
                sample.lower(i).ln(),
            )
        })
        .collect())
}

/// OLS line through QQ points; the slope estimates `ξ`.
pub fn qq_fit(points: &[(f64, f64)]) -> Result<LineFit> {
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    ols(&x, &y)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// CSV rows `sector,method,k0,k,xi_hat,alpha_hat,scale,std_error,flags`.
pub fn write_estimates_csv<W: Write>(out: W, rows: &[(String, TailIndexEstimate)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sector",
        "method",
        "k0",
        "k",
        "xi_hat",
        "alpha_hat",
        "scale",
        "std_error",
        "flags",
    ])?;
    for (label, e) in rows {
        w.write_record([
            label.clone(),
            e.method.to_string(),
            e.k0.map(|v| v.to_string()).unwrap_or_default(),
            e.k.map(|v| v.to_string()).unwrap_or_default(),
            opt(e.xi_hat),
            opt(e.alpha_hat),
            opt(e.scale),
            opt(e.std_error),
            e.flags
                .iter()
                .map(|f| f.name())
                .collect::<Vec<_>>()
                .join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
