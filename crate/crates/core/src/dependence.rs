//! Pairwise and joint dependence estimators: Pearson, the trimmed SSD-median
//! correlation with a Huber score, quadrant correlation and the Minimum
//! Covariance Determinant, plus repair of indefinite correlation matrices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{degenerate, invalid, Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue};
use crate::numeric::{mad, median};
use crate::par;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationMethod {
    Pearson,
    SsdMedian,
    Quadrant,
    Mcd,
}

impl CorrelationMethod {
    pub fn name(self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::SsdMedian => "ssd",
            CorrelationMethod::Quadrant => "quadrant",
            CorrelationMethod::Mcd => "mcd",
        }
    }
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "ssd" => Ok(Self::SsdMedian),
            "quadrant" => Ok(Self::Quadrant),
            "mcd" => Ok(Self::Mcd),
            other => Err(invalid(format!("unknown correlation method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiKind {
    Identity,
    Huber,
}

/// Settings of the SSD-median estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    /// Fraction trimmed from each end of every summation, in `[0, 0.5]`.
    pub trim_fraction: f64,
    pub huber_k: f64,
    pub psi: PsiKind,
    /// Divide median deviations by the MAD before applying the score.
    pub standardize: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            trim_fraction: 0.1,
            huber_k: 1.345,
            psi: PsiKind::Huber,
            standardize: true,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.trim_fraction) {
            return Err(invalid("trim fraction must lie in [0, 0.5]"));
        }
        if !(self.huber_k.is_finite() && self.huber_k > 0.0) {
            return Err(invalid("huber cutoff must be positive"));
        }
        Ok(())
    }

    fn psi(&self, z: f64) -> f64 {
        match self.psi {
            PsiKind::Identity => z,
            PsiKind::Huber => z.clamp(-self.huber_k, self.huber_k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub method: CorrelationMethod,
    pub value: f64,
    pub n: usize,
    pub labels: Option<(String, String)>,
}

impl CorrelationEstimate {
    fn new(method: CorrelationMethod, value: f64, n: usize) -> Self {
        Self {
            method,
            value: value.clamp(-1.0, 1.0),
            n,
            labels: None,
        }
    }

    pub fn with_labels(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.labels = Some((a.into(), b.into()));
        self
    }
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_n {
        return Err(invalid(format!(
            "need at least {min_n} paired observations"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("series contain non-finite values"));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationEstimate> {
    check_pair(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Err(invalid("pearson correlation of a constant series"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(CorrelationEstimate::new(
        CorrelationMethod::Pearson,
        sxy / (sxx * syy).sqrt(),
        x.len(),
    ))
}

/// Trimmed sum `n T_α(z)`: the mean of the central `n - 2r` order statistics
/// scaled by `n`, with `r = floor(α (n - 1))`.
pub fn trimmed_sum(z: &[f64], trim_fraction: f64) -> f64 {
    let n = z.len();
    let r = (trim_fraction * (n as f64 - 1.0)).floor() as usize;
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let kept = &s[r..n - r];
    n as f64 * kept.iter().sum::<f64>() / kept.len() as f64
}

fn scores(x: &[f64], config: &RobustConfig) -> Result<Vec<f64>> {
    let center = median(x);
    let scale = if config.standardize {
        let m = mad(x, center);
        if m <= 0.0 {
            return Err(degenerate("zero median absolute deviation"));
        }
        m
    } else {
        1.0
    };
    Ok(x.iter().map(|v| config.psi((v - center) / scale)).collect())
}

/// SSD-median correlation: median-centred (optionally MAD-standardised)
/// scores passed through the score function, combined with trimmed sums.
pub fn ssd_median_corr(x: &[f64], y: &[f64], config: &RobustConfig) -> Result<CorrelationEstimate> {
    config.validate()?;
    check_pair(x, y, 2)?;
    if (x.len() as f64) * (1.0 - 2.0 * config.trim_fraction) < 2.0 {
        return Err(invalid("too few observations survive trimming"));
    }
    let a = scores(x, config)?;
    let b = scores(y, config)?;
    let ab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
    let aa: Vec<f64> = a.iter().map(|p| p * p).collect();
    let bb: Vec<f64> = b.iter().map(|q| q * q).collect();
    let num = trimmed_sum(&ab, config.trim_fraction);
    let den =
        (trimmed_sum(&aa, config.trim_fraction) * trimmed_sum(&bb, config.trim_fraction)).sqrt();
    if !(den > 0.0) {
        return Err(degenerate("zero denominator after trimming"));
    }
    Ok(CorrelationEstimate::new(
        CorrelationMethod::SsdMedian,
        num / den,
        x.len(),
    ))
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Quadrant correlation `(1/n) Σ sgn(x_i - med x) sgn(y_i - med y)` with
/// `sgn(0) = 0`. With `drop_zeros` the average is over non-zero terms only.
pub fn quadrant_corr(x: &[f64], y: &[f64], drop_zeros: bool) -> Result<CorrelationEstimate> {
    check_pair(x, y, 2)?;
    let (mx, my) = (median(x), median(y));
    let terms: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| sgn(a - mx) * sgn(b - my))
        .collect();
    let total: f64 = terms.iter().sum();
    let denom = if drop_zeros {
        terms.iter().filter(|t| **t != 0.0).count()
    } else {
        terms.len()
    };
    if denom == 0 {
        return Err(degenerate("every quadrant term is zero"));
    }
    Ok(CorrelationEstimate::new(
        CorrelationMethod::Quadrant,
        total / denom as f64,
        x.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ConsistencyFactor {
    #[default]
    One,
    /// `(h/n) / P(χ²_{p+2} <= χ²_{p, h/n})`, consistent at the normal.
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdConfig {
    /// Subset size; `None` uses `ceil((n + p + 1) / 2)`.
    pub h: Option<usize>,
    /// Exhaustive search when the number of subsets is at most this.
    pub search_budget: u64,
    pub starts: usize,
    pub steps: usize,
    pub consistency: ConsistencyFactor,
    pub seed: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            h: None,
            search_budget: 1_000_000,
            starts: 500,
            steps: 20,
            consistency: ConsistencyFactor::One,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McdResult {
    /// Sorted row indices of the selected subset.
    pub subset: Vec<usize>,
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
    /// Determinant of the raw subset covariance.
    pub determinant: f64,
    pub c_p: f64,
    pub exhaustive: bool,
}

pub fn default_mcd_h(n: usize, p: usize) -> usize {
    (n + p + 2) / 2
}

/// Mean and covariance (divisor `h - 1`) of the rows in `subset`.
pub fn subset_moments(data: &DMatrix<f64>, subset: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.ncols();
    let h = subset.len() as f64;
    let mut mean = DVector::<f64>::zeros(p);
    for &i in subset {
        mean += data.row(i).transpose();
    }
    mean /= h;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for &i in subset {
        let d = data.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= h - 1.0;
    (mean, cov)
}

fn det_floor(data: &DMatrix<f64>) -> f64 {
    // Relative threshold below which a subset covariance counts as singular.
    // The scale is robust (squared MAD per column) so gross outliers cannot
    // inflate it past the determinant of the clean subset.
    let scale: f64 = data
        .column_iter()
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().collect();
            let mad = mad(&v, median(&v));
            if mad > 0.0 {
                mad * mad
            } else {
                let m = c.mean();
                c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64
            }
        })
        .product();
    1e-12 * scale.max(f64::MIN_POSITIVE)
}

/// One concentration step: the `h` rows nearest to the subset's centre in
/// the subset's Mahalanobis metric. Returns the new subset (sorted) and the
/// determinant of its covariance, or `None` if the current covariance is
/// singular.
pub fn concentration_step(
    data: &DMatrix<f64>,
    subset: &[usize],
    h: usize,
) -> Option<(Vec<usize>, f64)> {
    let (mean, cov) = subset_moments(data, subset);
    let inv = cov.clone().cholesky()?.inverse();
    let mut dist: Vec<(f64, usize)> = (0..data.nrows())
        .map(|i| {
            let d = data.row(i).transpose() - &mean;
            ((d.transpose() * &inv * &d)[(0, 0)], i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut next: Vec<usize> = dist[..h].iter().map(|d| d.1).collect();
    next.sort_unstable();
    let det = subset_moments(data, &next).1.determinant();
    Some((next, det))
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn exhaustive_search(data: &DMatrix<f64>, h: usize, floor: f64) -> Option<(Vec<usize>, f64)> {
    let n = data.nrows();
    let mut idx: Vec<usize> = (0..h).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let det = subset_moments(data, &idx).1.determinant();
        if det > floor && best.as_ref().is_none_or(|b| det < b.1) {
            best = Some((idx.clone(), det));
        }
        if !next_combination(&mut idx, n) {
            return best;
        }
    }
}

fn random_start(
    data: &DMatrix<f64>,
    h: usize,
    steps: usize,
    floor: f64,
    seeds: &SeedStream,
    start: usize,
) -> Option<(Vec<usize>, f64)> {
    let n = data.nrows();
    let p = data.ncols();
    let mut rng = seeds.rng("mcd-start", start as u64);
    // Grow a random (p+1)-subset until its covariance is non-singular.
    let order: Vec<usize> = sample_indices(&mut rng, n, n).into_vec();
    let mut size = p + 1;
    let mut subset = order[..size].to_vec();
    while subset_moments(data, &subset).1.determinant() <= floor {
        if size == n {
            return None;
        }
        size += 1;
        subset = order[..size].to_vec();
    }
    let (mut current, mut det) = concentration_step(data, &subset, h)?;
    if det <= floor {
        return None;
    }
    for _ in 0..steps {
        let Some((next, next_det)) = concentration_step(data, &current, h) else {
            break;
        };
        if next_det <= floor {
            break;
        }
        debug_assert!(
            next_det <= det * (1.0 + 1e-9),
            "concentration step increased the determinant"
        );
        let converged = next == current;
        current = next;
        det = next_det;
        if converged {
            break;
        }
    }
    Some((current, det))
}

fn consistency_factor(kind: ConsistencyFactor, n: usize, p: usize, h: usize) -> Result<f64> {
    match kind {
        ConsistencyFactor::One => Ok(1.0),
        ConsistencyFactor::ChiSquare => {
            let frac = h as f64 / n as f64;
            if frac >= 1.0 {
                return Ok(1.0);
            }
            let chi_p = ChiSquared::new(p as f64).map_err(|e| Error::Numerical(e.to_string()))?;
            let chi_p2 =
                ChiSquared::new(p as f64 + 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
            let q = chi_p.inverse_cdf(frac);
            Ok(frac / chi_p2.cdf(q))
        }
    }
}

/// Covariance-to-correlation conversion.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (d[i] * d[j])).clamp(-1.0, 1.0)
        }
    })
}

/// Minimum Covariance Determinant estimate of location and scatter for the
/// rows of `data` (n × p).
pub fn mcd(data: &DMatrix<f64>, config: &McdConfig) -> Result<McdResult> {
    let (n, p) = data.shape();
    if p < 2 || n <= p {
        return Err(invalid(format!("mcd needs n > p >= 2 (n = {n}, p = {p})")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("mcd data contain non-finite values"));
    }
    let h_min = default_mcd_h(n, p);
    let h = config.h.unwrap_or(h_min);
    if h < h_min || h > n {
        return Err(invalid(format!(
            "subset size h = {h} must be in [{h_min}, {n}]"
        )));
    }
    let floor = det_floor(data);
    let exhaustive = binomial(n, h) <= config.search_budget;
    let best = if exhaustive {
        exhaustive_search(data, h, floor)
    } else {
        if config.starts == 0 {
            return Err(invalid("mcd needs at least one random start"));
        }
        let seeds = SeedStream::new(config.seed);
        let runs = par::map_range(config.starts, |s| {
            random_start(data, h, config.steps, floor, &seeds, s)
        });
        // Minimum determinant; ties go to the lowest start index.
        runs.into_iter()
            .flatten()
            .fold(None::<(Vec<usize>, f64)>, |acc, r| match acc {
                Some(a) if a.1 <= r.1 => Some(a),
                _ => Some(r),
            })
    };
    let (subset, determinant) = best.ok_or_else(|| {
        degenerate("degenerate configuration: every subset covariance is singular")
    })?;
    let (location, cov) = subset_moments(data, &subset);
    let c_p = consistency_factor(config.consistency, n, p, h)?;
    let scatter = cov * c_p;
    let correlation = cov_to_corr(&scatter);
    Ok(McdResult {
        subset,
        location,
        scatter,
        correlation,
        determinant,
        c_p,
        exhaustive,
    })
}

/// Settings for every correlation method used on a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DependenceConfig {
    pub robust: RobustConfig,
    pub quadrant_drop_zeros: bool,
    pub mcd: McdConfig,
}

fn pairwise(
    x: &[f64],
    y: &[f64],
    method: CorrelationMethod,
    config: &DependenceConfig,
) -> Result<f64> {
    Ok(match method {
        CorrelationMethod::Pearson => pearson(x, y)?.value,
        CorrelationMethod::SsdMedian => ssd_median_corr(x, y, &config.robust)?.value,
        CorrelationMethod::Quadrant => quadrant_corr(x, y, config.quadrant_drop_zeros)?.value,
        CorrelationMethod::Mcd => unreachable!("mcd is estimated jointly"),
    })
}

/// Correlation matrix of aligned series. Pairwise methods fill each entry
/// separately; MCD is fitted jointly on all series.
pub fn correlation_matrix(
    panel: &[Vec<f64>],
    labels: &[String],
    method: CorrelationMethod,
    config: &DependenceConfig,
) -> Result<DMatrix<f64>> {
    let d = panel.len();
    if d < 2 {
        return Err(invalid("correlation matrix needs at least two series"));
    }
    if labels.len() != d {
        return Err(invalid("one label per series is required"));
    }
    let n = panel[0].len();
    if panel.iter().any(|s| s.len() != n) {
        return Err(invalid("series are not aligned"));
    }
    if method == CorrelationMethod::Mcd {
        let data = DMatrix::from_fn(n, d, |t, i| panel[i][t]);
        return Ok(mcd(&data, &config.mcd)?.correlation);
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .collect();
    let values = par::map_slice(&pairs, |&(i, j)| {
        pairwise(&panel[i], &panel[j], method, config).map_err(|e| {
            invalid(format!(
                "{method} correlation of ({}, {}): {e}",
                labels[i], labels[j]
            ))
        })
    });
    let mut m = DMatrix::<f64>::identity(d, d);
    for (&(i, j), v) in pairs.iter().zip(values) {
        let v = v?;
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(m)
}

pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;

/// Result of positive-semidefinite repair.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdRepair {
    pub matrix: DMatrix<f64>,
    /// Whether any entry differs from the input.
    pub changed: bool,
}

/// Nearest correlation matrix by eigenvalue clipping: eigenvalues below
/// `floor` are raised to it, the result is rescaled to unit diagonal, and if
/// the rescaling pushed the smallest eigenvalue below `floor` it is blended
/// towards the identity just enough to restore it. Already valid correlation
/// matrices are returned unchanged.
pub fn nearest_psd(m: &DMatrix<f64>, floor: f64) -> Result<PsdRepair> {
    if !is_symmetric(m, 1e-12) {
        return Err(invalid("nearest_psd needs a symmetric matrix"));
    }
    if !(floor.is_finite() && (0.0..1.0).contains(&floor)) {
        return Err(invalid("eigen floor must lie in [0, 1)"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix contains non-finite values"));
    }
    let d = m.nrows();
    let unit_diag = (0..d).all(|i| (m[(i, i)] - 1.0).abs() <= 1e-12);
    if unit_diag && min_eigenvalue(m) >= floor {
        return Ok(PsdRepair {
            matrix: m.clone(),
            changed: false,
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let a = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let s: Vec<f64> = (0..d).map(|i| a[(i, i)].sqrt()).collect();
    let mut c = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            a[(i, j)] / (s[i] * s[j])
        }
    });
    // Aim slightly above the floor so rounding in the blend cannot leave the
    // result just under it, which would make the repair non-idempotent.
    let target = floor + 8.0 * f64::EPSILON;
    for _ in 0..4 {
        let mu = min_eigenvalue(&c);
        if mu >= floor {
            break;
        }
        let t = ((target - mu) / (1.0 - mu)).min(1.0);
        c = c * (1.0 - t) + DMatrix::identity(d, d) * t;
        c = (&c + c.transpose()) * 0.5;
        for i in 0..d {
            c[(i, i)] = 1.0;
        }
    }
    Ok(PsdRepair {
        changed: c != *m,
        matrix: c,
    })
}

/// CSV rows `row,col,value,method`.
pub fn write_correlation_csv<W: Write>(
    out: W,
    labels: &[String],
    m: &DMatrix<f64>,
    method: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "value", "method"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_record([
                labels[i].as_str(),
                labels[j].as_str(),
                &format!("{:?}", m[(i, j)]),
                method,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
