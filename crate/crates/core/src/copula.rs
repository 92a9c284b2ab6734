//! Dependence models on the unit hypercube.
//!
//! Gaussian, Joe, survival Joe and independence copulas, products of
//! independent pair copulas, rank-based pseudo-observations, maximum
//! likelihood pair fitting with AIC selection, and the search over
//! pair-product structures.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{degenerate, invalid, Error, Result};
use crate::linalg::{is_symmetric, psd_cholesky};
use crate::numeric::{bisect, brent_minimize, integrate};
use crate::par;
use crate::rng::SeedStream;

const UNIT_HI: f64 = 1.0 - f64::EPSILON / 2.0;
const UNIT_LO: f64 = f64::MIN_POSITIVE;
const SAMPLE_BLOCK: usize = 2048;

fn open_unit(x: f64) -> f64 {
    x.clamp(UNIT_LO, UNIT_HI)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairFamily {
    Independence,
    Gaussian,
    Joe,
    SurvivalJoe,
}

impl PairFamily {
    /// The default candidate set used for pair selection.
    pub const DEFAULT_CANDIDATES: [PairFamily; 4] = [
        PairFamily::Independence,
        PairFamily::Gaussian,
        PairFamily::Joe,
        PairFamily::SurvivalJoe,
    ];

    pub fn parameter_count(self) -> usize {
        match self {
            PairFamily::Independence => 0,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairFamily::Independence => "independence",
            PairFamily::Gaussian => "gaussian",
            PairFamily::Joe => "joe",
            PairFamily::SurvivalJoe => "survival-joe",
        }
    }
}

impl fmt::Display for PairFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PairFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "indep" => Ok(PairFamily::Independence),
            "gaussian" | "normal" => Ok(PairFamily::Gaussian),
            "joe" => Ok(PairFamily::Joe),
            "survival-joe" | "survivaljoe" | "sjoe" => Ok(PairFamily::SurvivalJoe),
            other => Err(invalid(format!("unknown pair copula family '{other}'"))),
        }
    }
}

/// A fully parameterised bivariate copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairCopula {
    Independence,
    Gaussian { rho: f64 },
    Joe { theta: f64 },
    SurvivalJoe { theta: f64 },
}

impl PairCopula {
    pub fn family(&self) -> PairFamily {
        match self {
            PairCopula::Independence => PairFamily::Independence,
            PairCopula::Gaussian { .. } => PairFamily::Gaussian,
            PairCopula::Joe { .. } => PairFamily::Joe,
            PairCopula::SurvivalJoe { .. } => PairFamily::SurvivalJoe,
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            PairCopula::Independence => None,
            PairCopula::Gaussian { rho } => Some(rho),
            PairCopula::Joe { theta } | PairCopula::SurvivalJoe { theta } => Some(theta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PairCopula::Independence => Ok(()),
            PairCopula::Gaussian { rho } => {
                if (-1.0..=1.0).contains(&rho) {
                    Ok(())
                } else {
                    Err(invalid(format!(
                        "gaussian correlation {rho} outside [-1, 1]"
                    )))
                }
            }
            PairCopula::Joe { theta } | PairCopula::SurvivalJoe { theta } => check_theta(theta),
        }
    }

    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        match *self {
            PairCopula::Independence => Ok(u * v),
            PairCopula::Gaussian { .. } => Err(invalid(
                "bivariate gaussian CDF is not provided; use density or sampling",
            )),
            PairCopula::Joe { theta } => joe_cdf(u, v, theta),
            PairCopula::SurvivalJoe { theta } => survival_joe_cdf(u, v, theta),
        }
    }

    /// Log density at an interior point.
    pub fn log_density(&self, u: f64, v: f64) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian { rho } => gaussian_log_density(u, v, rho),
            PairCopula::Joe { theta } => joe_log_density_bar(1.0 - u, 1.0 - v, theta),
            PairCopula::SurvivalJoe { theta } => joe_log_density_bar(u, v, theta),
        }
    }

    pub fn kendall_tau(&self) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian { rho } => 2.0 / std::f64::consts::PI * rho.asin(),
            PairCopula::Joe { theta } | PairCopula::SurvivalJoe { theta } => {
                kendall_tau_joe(theta).unwrap_or(f64::NAN)
            }
        }
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match *self {
            PairCopula::Independence => (rng.sample(Open01), rng.sample(Open01)),
            PairCopula::Gaussian { rho } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let y = if rho.abs() >= 1.0 {
                    rho.signum() * z1
                } else {
                    rho * z1 + (1.0 - rho * rho).sqrt() * z2
                };
                (open_unit(normal_cdf(z1)), open_unit(normal_cdf(y)))
            }
            PairCopula::Joe { theta } => {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                (
                    u,
                    open_unit(1.0 - joe_conditional_inverse_bar(1.0 - u, w, theta)),
                )
            }
            PairCopula::SurvivalJoe { theta } => {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                // Sample Joe at (1-u, .) and reflect both coordinates.
                let v_bar = joe_conditional_inverse_bar(u, w, theta);
                (u, open_unit(v_bar))
            }
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta >= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "Joe parameter theta = {theta} must be >= 1"
        )))
    }
}

/// Joe copula CDF `1 - (ū^θ + v̄^θ - ū^θ v̄^θ)^{1/θ}` with `ū = 1 - u`.
pub fn joe_cdf(u: f64, v: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(invalid("copula arguments must lie in [0, 1]"));
    }
    let a = (1.0 - u).powf(theta);
    let b = (1.0 - v).powf(theta);
    Ok(1.0 - (a + b - a * b).powf(1.0 / theta))
}

/// Survival Joe CDF `u + v - 1 + C_Joe(1 - u, 1 - v)`.
pub fn survival_joe_cdf(u: f64, v: f64, theta: f64) -> Result<f64> {
    Ok(u + v - 1.0 + joe_cdf(1.0 - u, 1.0 - v, theta)?)
}

/// Joe copula density.
pub fn joe_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(invalid("copula arguments must lie in [0, 1]"));
    }
    Ok(joe_log_density_bar(1.0 - u, 1.0 - v, theta).exp())
}

/// Survival Joe density `c_Joe(1 - u, 1 - v)`.
pub fn survival_joe_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    joe_density(1.0 - u, 1.0 - v, theta)
}

// Log density of the Joe copula written in the reflected coordinates
// ū = 1 - u, v̄ = 1 - v, which keeps precision in the upper tail.
fn joe_log_density_bar(ub: f64, vb: f64, theta: f64) -> f64 {
    let a = ub.powf(theta);
    let b = vb.powf(theta);
    let s = a + b - a * b;
    (1.0 / theta - 2.0) * s.ln() + (theta - 1.0) * (ub.ln() + vb.ln()) + (theta - 1.0 + s).ln()
}

// ∂C/∂u of the Joe copula in reflected coordinates; decreasing in v̄.
fn joe_conditional_bar(ub: f64, vb: f64, theta: f64) -> f64 {
    let a = ub.powf(theta);
    let b = vb.powf(theta);
    let s = a + b - a * b;
    ub.powf(theta - 1.0) * (1.0 - b) * s.powf(1.0 / theta - 1.0)
}

/// Solve `∂C/∂u (u, v) = w` for `v̄ = 1 - v` given `ū = 1 - u`.
fn joe_conditional_inverse_bar(ub: f64, w: f64, theta: f64) -> f64 {
    if theta == 1.0 {
        return 1.0 - w;
    }
    let root = bisect(|vb| joe_conditional_bar(ub, vb, theta) - w, 0.0, 1.0, 1e-10);
    match root {
        Ok(r) => r.x,
        // h(v̄=0) = 1 and h(v̄=1) = 0 up to rounding; fall back to the edges.
        Err(_) => {
            if joe_conditional_bar(ub, 0.5, theta) > w {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn gaussian_log_density(u: f64, v: f64, rho: f64) -> f64 {
    let x = normal_quantile(u);
    let y = normal_quantile(v);
    let r2 = rho * rho;
    -0.5 * (1.0 - r2).ln() - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - r2))
}

/// Kendall's τ of the Joe copula, `1 + 4 ∫ φ(t)/φ'(t) dt` over `[0, 1]` for the
/// generator `φ(t) = -ln(1 - (1 - t)^θ)`, integrated numerically.
pub fn kendall_tau_joe(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    // Substituting x = 1 - t: φ/φ' = (1 - x^θ) ln(1 - x^θ) / (θ x^(θ-1)).
    let g = |x: f64| {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        let p = x.powf(theta);
        (1.0 - p) * (-p).ln_1p() / (theta * x.powf(theta - 1.0))
    };
    Ok(1.0 + 4.0 * integrate(g, 0.0, 1.0, 1e-10))
}

/// A pair of dimension labels coupled by a bivariate copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub first: usize,
    pub second: usize,
    pub copula: PairCopula,
}

/// A dependence model over `dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum CopulaSpec {
    Independence {
        dim: usize,
    },
    Gaussian {
        corr: DMatrix<f64>,
    },
    Joe {
        theta: f64,
    },
    SurvivalJoe {
        theta: f64,
    },
    /// Independent pair copulas plus at most one independent singleton.
    PairProduct {
        dim: usize,
        pairs: Vec<PairBlock>,
        singleton: Option<usize>,
    },
}

impl CopulaSpec {
    pub fn gaussian_pair(rho: f64) -> Self {
        CopulaSpec::Gaussian {
            corr: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CopulaSpec::Independence { dim } | CopulaSpec::PairProduct { dim, .. } => *dim,
            CopulaSpec::Gaussian { corr } => corr.nrows(),
            CopulaSpec::Joe { .. } | CopulaSpec::SurvivalJoe { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CopulaSpec::Independence { .. } => "independence",
            CopulaSpec::Gaussian { .. } => "gaussian",
            CopulaSpec::Joe { .. } => "joe",
            CopulaSpec::SurvivalJoe { .. } => "survival-joe",
            CopulaSpec::PairProduct { .. } => "pair-product",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CopulaSpec::Independence { dim } => {
                if *dim == 0 {
                    return Err(invalid("copula dimension must be positive"));
                }
                Ok(())
            }
            CopulaSpec::Gaussian { corr } => {
                validate_correlation(corr)?;
                psd_cholesky(corr, 1e-10)
                    .map(|_| ())
                    .map_err(|_| invalid("gaussian copula matrix is not positive semidefinite"))
            }
            CopulaSpec::Joe { theta } | CopulaSpec::SurvivalJoe { theta } => check_theta(*theta),
            CopulaSpec::PairProduct {
                dim,
                pairs,
                singleton,
            } => {
                let mut seen = vec![false; *dim];
                let mut mark = |i: usize| -> Result<()> {
                    if i >= *dim || seen[i] {
                        return Err(invalid(format!(
                            "pair-product partition must cover each label exactly once (label {i})"
                        )));
                    }
                    seen[i] = true;
                    Ok(())
                };
                for p in pairs {
                    p.copula.validate()?;
                    mark(p.first)?;
                    mark(p.second)?;
                }
                if let Some(s) = singleton {
                    mark(*s)?;
                }
                if seen.iter().any(|s| !s) {
                    return Err(invalid("pair-product partition leaves a label uncovered"));
                }
                Ok(())
            }
        }
    }
}

fn validate_correlation(corr: &DMatrix<f64>) -> Result<()> {
    if corr.nrows() == 0 || !is_symmetric(corr, 1e-12) {
        return Err(invalid("correlation matrix must be square and symmetric"));
    }
    if (0..corr.nrows()).any(|i| (corr[(i, i)] - 1.0).abs() > 1e-12) {
        return Err(invalid("correlation matrix must have a unit diagonal"));
    }
    Ok(())
}

/// An `rows x dim` row-major matrix of copula draws in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSample {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl UniformSample {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.dim + j])
            .collect()
    }
}

/// Draw `n` observations from `spec`; deterministic for a given seed stream.
pub fn sample_copula(spec: &CopulaSpec, n: usize, seeds: SeedStream) -> Result<UniformSample> {
    spec.validate()?;
    let dim = spec.dim();
    let mut data = vec![0.0; n * dim];
    let factor = match spec {
        CopulaSpec::Gaussian { corr } => Some(psd_cholesky(corr, 1e-10)?),
        _ => None,
    };
    par::for_each_block_mut(&mut data, SAMPLE_BLOCK * dim, |b, chunk| {
        let mut rng = seeds.rng("copula-sample", b as u64);
        let mut z = vec![0.0; dim];
        for row in chunk.chunks_mut(dim) {
            match spec {
                CopulaSpec::Independence { .. } => {
                    for x in row.iter_mut() {
                        *x = rng.sample(Open01);
                    }
                }
                CopulaSpec::Gaussian { .. } => {
                    let l = factor.as_ref().expect("factor computed for gaussian");
                    for e in z.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    for (i, x) in row.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (k, e) in z.iter().enumerate().take(i + 1) {
                            s += l[(i, k)] * e;
                        }
                        *x = open_unit(normal_cdf(s));
                    }
                }
                CopulaSpec::Joe { theta } => {
                    let (u, v) = PairCopula::Joe { theta: *theta }.sample_pair(&mut rng);
                    row[0] = u;
                    row[1] = v;
                }
                CopulaSpec::SurvivalJoe { theta } => {
                    let (u, v) = PairCopula::SurvivalJoe { theta: *theta }.sample_pair(&mut rng);
                    row[0] = u;
                    row[1] = v;
                }
                CopulaSpec::PairProduct {
                    pairs, singleton, ..
                } => {
                    for p in pairs {
                        let (u, v) = p.copula.sample_pair(&mut rng);
                        row[p.first] = u;
                        row[p.second] = v;
                    }
                    if let Some(s) = singleton {
                        row[*s] = rng.sample(Open01);
                    }
                }
            }
        }
    });
    Ok(UniformSample { rows: n, dim, data })
}

/// Rank-transformed observations: entry `(t, i)` is the (average) rank of
/// observation `t` within margin `i`, divided by `n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    columns: Vec<Vec<f64>>,
}

impl PseudoObservations {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }
}

/// Average ranks (1-based) of `x`; ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pseudo-observations of aligned series (one slice per margin).
pub fn pseudo_observations(panel: &[Vec<f64>]) -> Result<PseudoObservations> {
    let n = panel.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(invalid(
            "pseudo-observations need at least two observations",
        ));
    }
    if panel.iter().any(|c| c.len() != n) {
        return Err(invalid("series must be aligned (equal lengths)"));
    }
    let denom = (n + 1) as f64;
    let columns = panel
        .iter()
        .map(|c| average_ranks(c).into_iter().map(|r| r / denom).collect())
        .collect();
    Ok(PseudoObservations { columns })
}

/// Bounds and tolerance for pair-copula maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub theta_max: f64,
    pub rho_max: f64,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            theta_max: 50.0,
            rho_max: 0.999,
            tol: 1e-8,
        }
    }
}

/// Maximum-likelihood fit of a single family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyFit {
    pub copula: PairCopula,
    pub loglik: f64,
    pub aic: f64,
    pub tau: f64,
    /// The estimate sits on the configured parameter bound.
    pub at_boundary: bool,
}

impl FamilyFit {
    pub fn family(&self) -> PairFamily {
        self.copula.family()
    }
}

/// Outcome of AIC selection among candidate families.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFit {
    pub selected: FamilyFit,
    pub candidates: Vec<FamilyFit>,
}

fn loglik(copula: &PairCopula, u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| copula.log_density(a, b))
        .sum()
}

/// Fit one family by bounded scalar maximum likelihood.
pub fn fit_family(
    u: &[f64],
    v: &[f64],
    family: PairFamily,
    opts: &FitOptions,
) -> Result<FamilyFit> {
    if u.len() != v.len() {
        return Err(invalid("pair fit needs equally long margins"));
    }
    if u.iter().chain(v).any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(invalid(
            "pair fit needs observations strictly inside (0, 1)",
        ));
    }
    let (copula, at_boundary) = match family {
        PairFamily::Independence => (PairCopula::Independence, false),
        PairFamily::Gaussian => {
            let m = brent_minimize(
                |r| -loglik(&PairCopula::Gaussian { rho: r }, u, v),
                -opts.rho_max,
                opts.rho_max,
                opts.tol,
            );
            let edge = opts.rho_max - m.x.abs() < 1e-6;
            (PairCopula::Gaussian { rho: m.x }, edge)
        }
        PairFamily::Joe | PairFamily::SurvivalJoe => {
            let make = |t: f64| match family {
                PairFamily::Joe => PairCopula::Joe { theta: t },
                _ => PairCopula::SurvivalJoe { theta: t },
            };
            let m = brent_minimize(|t| -loglik(&make(t), u, v), 1.0, opts.theta_max, opts.tol);
            let edge = opts.theta_max - m.x < 1e-6 * opts.theta_max;
            (make(m.x), edge)
        }
    };
    let ll = loglik(&copula, u, v);
    if !ll.is_finite() {
        return Err(Error::Numerical(format!(
            "{family} log-likelihood is not finite"
        )));
    }
    let k = family.parameter_count() as f64;
    Ok(FamilyFit {
        copula,
        loglik: ll,
        aic: 2.0 * k - 2.0 * ll,
        tau: copula.kendall_tau(),
        at_boundary,
    })
}

/// Fit every candidate family and select the minimum-AIC one. Ties go to the
/// family listed first.
pub fn fit_pair_copula(
    u: &[f64],
    v: &[f64],
    families: &[PairFamily],
    opts: &FitOptions,
) -> Result<PairFit> {
    if u.len() < 10 {
        return Err(invalid("pair fitting needs at least 10 observations"));
    }
    if families.is_empty() {
        return Err(invalid("no candidate families"));
    }
    let mut candidates = Vec::new();
    let mut last_err = None;
    for &f in families {
        match fit_family(u, v, f, opts) {
            Ok(fit) => candidates.push(fit),
            Err(e) => last_err = Some(e),
        }
    }
    let selected = candidates
        .iter()
        .fold(None::<&FamilyFit>, |best, c| match best {
            Some(b) if b.aic <= c.aic => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| last_err.unwrap_or_else(|| degenerate("every family failed to fit")))?;
    Ok(PairFit {
        selected,
        candidates,
    })
}

/// A partition of labels into disjoint pairs plus at most one singleton.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairStructure {
    pub pairs: Vec<(usize, usize)>,
    pub singleton: Option<usize>,
}

impl PairStructure {
    pub fn contains_pair(&self, a: usize, b: usize) -> bool {
        let (a, b) = (a.min(b), a.max(b));
        self.pairs.iter().any(|&p| p == (a, b))
    }
}

fn perfect_matchings(labels: &[usize]) -> Vec<Vec<(usize, usize)>> {
    if labels.is_empty() {
        return vec![Vec::new()];
    }
    let first = labels[0];
    let mut out = Vec::new();
    for k in 1..labels.len() {
        let rest: Vec<usize> = labels[1..]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i + 1 != k)
            .map(|(_, &l)| l)
            .collect();
        for mut m in perfect_matchings(&rest) {
            m.insert(0, (first, labels[k]));
            out.push(m);
        }
    }
    out
}

/// All pair-product partitions of `d` labels (one singleton when `d` is odd).
pub fn enumerate_structures(d: usize) -> Result<Vec<PairStructure>> {
    if d < 2 {
        return Err(invalid("structures need at least two labels"));
    }
    let all: Vec<usize> = (0..d).collect();
    if d % 2 == 0 {
        return Ok(perfect_matchings(&all)
            .into_iter()
            .map(|pairs| PairStructure {
                pairs,
                singleton: None,
            })
            .collect());
    }
    let mut out = Vec::new();
    for s in 0..d {
        let rest: Vec<usize> = all.iter().copied().filter(|&l| l != s).collect();
        for pairs in perfect_matchings(&rest) {
            out.push(PairStructure {
                pairs,
                singleton: Some(s),
            });
        }
    }
    Ok(out)
}

/// A scored pair-product structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureCandidate {
    /// Position in [`enumerate_structures`] order.
    pub id: usize,
    pub structure: PairStructure,
    /// The selected fit for each pair, aligned with `structure.pairs`.
    pub pair_fits: Vec<FamilyFit>,
    /// Sum of the pairs' maximised log-likelihoods; the singleton adds 0.
    pub score: f64,
}

impl StructureCandidate {
    pub fn spec(&self, dim: usize) -> CopulaSpec {
        CopulaSpec::PairProduct {
            dim,
            pairs: self
                .structure
                .pairs
                .iter()
                .zip(&self.pair_fits)
                .map(|(&(a, b), f)| PairBlock {
                    first: a,
                    second: b,
                    copula: f.copula,
                })
                .collect(),
            singleton: self.structure.singleton,
        }
    }
}

/// Rank every pair-product structure by total pair log-likelihood.
///
/// Each unordered pair is fitted once (AIC selection among `families`); a
/// structure's score is the sum of its pairs' log-likelihoods. Within the
/// candidate class the highest score is the smallest Kullback-Leibler
/// divergence from the empirical copula, since the entropy term is shared.
pub fn select_structure(
    pobs: &PseudoObservations,
    families: &[PairFamily],
    opts: &FitOptions,
) -> Result<Vec<StructureCandidate>> {
    let d = pobs.dim();
    if d < 3 {
        return Err(invalid("structure search needs at least three margins"));
    }
    if pobs.len() < 10 {
        return Err(invalid("structure search needs at least 10 observations"));
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| ((a + 1)..d).map(move |b| (a, b)))
        .collect();
    let fits = par::map_slice(&pairs, |&(a, b)| {
        fit_pair_copula(pobs.column(a), pobs.column(b), families, opts)
            .map_err(|e| invalid(format!("pair ({a}, {b}): {e}")))
    });
    let mut table = std::collections::HashMap::new();
    for (p, f) in pairs.iter().zip(fits) {
        table.insert(*p, f?.selected);
    }
    let mut ranked: Vec<StructureCandidate> = enumerate_structures(d)?
        .into_iter()
        .enumerate()
        .map(|(id, structure)| {
            let pair_fits: Vec<FamilyFit> =
                structure.pairs.iter().map(|p| table[p].clone()).collect();
            let score = pair_fits.iter().map(|f| f.loglik).sum();
            StructureCandidate {
                id,
                structure,
                pair_fits,
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(ranked)
}

/// Write a ranked structure report as CSV.
pub fn write_structure_report<W: Write>(
    out: W,
    ranked: &[StructureCandidate],
    labels: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "structure_id",
        "rank",
        "singleton",
        "pair",
        "family",
        "theta",
        "tau",
        "aic",
        "total_score",
    ])?;
    let label = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
    for (rank, c) in ranked.iter().enumerate() {
        let singleton = c.structure.singleton.map(label).unwrap_or_default();
        for (&(a, b), f) in c.structure.pairs.iter().zip(&c.pair_fits) {
            w.write_record([
                c.id.to_string(),
                (rank + 1).to_string(),
                singleton.clone(),
                format!("{}-{}", label(a), label(b)),
                f.family().to_string(),
                f.copula
                    .parameter()
                    .map(|p| format!("{p:.6}"))
                    .unwrap_or_default(),
                format!("{:.6}", f.tau),
                format!("{:.6}", f.aic),
                format!("{:.6}", c.score),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
