//! Zero-utility premiums, empirical value at risk, the diversification ratio
//! and percentile bootstrap intervals.
//!
//! Premiums solve the indifference equation
//! `E u(w - L) = E u(w - P - L + L_c)` on a frozen scenario set, where `L` is
//! the weighted total loss and `L_c` the insured (capped) part of it. Reusing
//! the same scenarios on both sides makes the root a deterministic function
//! of the set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::compound::{simulate_line, AggregateTable, JointScenarioSet, LineModel, Severity};
use crate::error::{degenerate, invalid, Error, Result};
use crate::numeric::{quantile_type1, quantile_type7, sorted};
use crate::par;
use crate::rng::SeedStream;
use crate::tail_index::{OrderedSample, SweepCell};

/// Losses per scenario and line, as seen by the pricing routines.
pub trait EventSource: Sync {
    fn scenario_count(&self) -> usize;
    fn line_count(&self) -> usize;
    /// Call `f` for every event loss of `line` in `scenario`.
    fn visit_events(&self, scenario: usize, line: usize, f: &mut dyn FnMut(f64));

    fn aggregate(&self, scenario: usize, line: usize) -> f64 {
        let mut s = 0.0;
        self.visit_events(scenario, line, &mut |x| s += x);
        s
    }
}

impl EventSource for JointScenarioSet<'_> {
    fn scenario_count(&self) -> usize {
        JointScenarioSet::scenario_count(self)
    }

    fn line_count(&self) -> usize {
        JointScenarioSet::line_count(self)
    }

    fn visit_events(&self, scenario: usize, line: usize, f: &mut dyn FnMut(f64)) {
        self.events(scenario, line).for_each(f);
    }

    fn aggregate(&self, scenario: usize, line: usize) -> f64 {
        JointScenarioSet::aggregate(self, scenario, line)
    }
}

impl EventSource for AggregateTable {
    fn scenario_count(&self) -> usize {
        self.len()
    }

    fn line_count(&self) -> usize {
        1
    }

    fn visit_events(&self, scenario: usize, _line: usize, f: &mut dyn FnMut(f64)) {
        self.events(scenario).iter().copied().for_each(f);
    }

    fn aggregate(&self, scenario: usize, _line: usize) -> f64 {
        AggregateTable::aggregate(self, scenario)
    }
}

/// Explicit event vectors indexed `[scenario][line][event]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPanel {
    lines: usize,
    scenarios: Vec<Vec<Vec<f64>>>,
}

impl EventPanel {
    pub fn new(scenarios: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let lines = scenarios.first().map(Vec::len).unwrap_or(0);
        if scenarios.is_empty() || lines == 0 {
            return Err(invalid(
                "event panel needs at least one scenario and one line",
            ));
        }
        if scenarios.iter().any(|s| s.len() != lines) {
            return Err(invalid("every scenario must list the same number of lines"));
        }
        if scenarios
            .iter()
            .flatten()
            .flatten()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(invalid("event losses must be finite and non-negative"));
        }
        Ok(Self { lines, scenarios })
    }

    /// One line, one event per scenario.
    pub fn single_losses(losses: &[f64]) -> Result<Self> {
        Self::new(losses.iter().map(|&x| vec![vec![x]]).collect())
    }

    /// Add `delta` to every event loss.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.scenarios
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|l| l.iter().map(|x| x + delta).collect())
                        .collect()
                })
                .collect(),
        )
    }
}

impl EventSource for EventPanel {
    fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    fn line_count(&self) -> usize {
        self.lines
    }

    fn visit_events(&self, scenario: usize, line: usize, f: &mut dyn FnMut(f64)) {
        self.scenarios[scenario][line].iter().copied().for_each(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilityKind {
    /// `ln x`, floored at a billionth of wealth so ruinous scenarios stay finite.
    Log,
    Linear,
    /// `(1 - exp(-a (x - w))) / a`, an affine shift of CARA utility.
    Exponential {
        risk_aversion: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub wealth: f64,
}

/// Smallest log-utility argument, as a fraction of wealth.
pub const RUIN_FLOOR: f64 = 1e-9;

impl UtilitySpec {
    pub fn log(wealth: f64) -> Self {
        Self {
            kind: UtilityKind::Log,
            wealth,
        }
    }

    pub fn linear(wealth: f64) -> Self {
        Self {
            kind: UtilityKind::Linear,
            wealth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wealth.is_finite() && self.wealth > 0.0) {
            return Err(invalid("wealth must be positive"));
        }
        if let UtilityKind::Exponential { risk_aversion } = self.kind {
            if !(risk_aversion.is_finite() && risk_aversion > 0.0) {
                return Err(invalid("risk aversion must be positive"));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            UtilityKind::Log => x.max(RUIN_FLOOR * self.wealth).ln(),
            UtilityKind::Linear => x,
            UtilityKind::Exponential { risk_aversion: a } => -(-a * (x - self.wealth)).exp_m1() / a,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            UtilityKind::Log => {
                let floor = RUIN_FLOOR * self.wealth;
                if x > floor {
                    1.0 / x
                } else {
                    0.0
                }
            }
            UtilityKind::Linear => 1.0,
            UtilityKind::Exponential { risk_aversion: a } => (-a * (x - self.wealth)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CapMode {
    /// Each event is insured up to `c w`.
    #[default]
    PerEvent,
    /// Each line's aggregate is insured up to `c w`.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTerms {
    /// Cover fraction `c` in `(0, 1]`; the cap is `c w`.
    pub cover: f64,
    /// Line weights, non-negative and summing to one (portfolio mode).
    pub weights: Vec<f64>,
    pub cap_mode: CapMode,
}

impl PolicyTerms {
    pub fn new(cover: f64, weights: Vec<f64>) -> Self {
        Self {
            cover,
            weights,
            cap_mode: CapMode::PerEvent,
        }
    }

    pub fn equal_weights(cover: f64, lines: usize) -> Self {
        Self::new(cover, vec![1.0 / lines as f64; lines])
    }

    pub fn validate(&self, lines: usize) -> Result<()> {
        if !(self.cover > 0.0 && self.cover <= 1.0) {
            return Err(invalid("cover fraction must lie in (0, 1]"));
        }
        if self.weights.len() != lines {
            return Err(invalid(format!(
                "expected {lines} portfolio weights, got {}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("portfolio weights must be non-negative"));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("portfolio weights must sum to one"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PremiumMode {
    /// A single line with weight one.
    Line(usize),
    /// All lines with the policy weights.
    Portfolio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Tolerance relative to wealth.
    pub rel_tol: f64,
    /// Absolute tolerance floor (one cent by default).
    pub abs_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 0.01,
            max_iterations: 200,
        }
    }
}

impl SolverOptions {
    pub fn tolerance(&self, wealth: f64) -> f64 {
        (self.rel_tol * wealth).max(self.abs_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumQuote {
    pub premium: f64,
    pub std_error: f64,
    pub iterations: usize,
    pub scenarios: usize,
    pub converged: bool,
    pub tolerance: f64,
}

/// Per-scenario weighted total loss and insured part.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLosses {
    pub total: Vec<f64>,
    pub insured: Vec<f64>,
}

impl ScenarioLosses {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            total: indices.iter().map(|&s| self.total[s]).collect(),
            insured: indices.iter().map(|&s| self.insured[s]).collect(),
        }
    }
}

fn mode_weights(d: usize, terms: &PolicyTerms, mode: PremiumMode) -> Result<Vec<f64>> {
    match mode {
        PremiumMode::Line(i) => {
            if i >= d {
                return Err(invalid(format!("line {i} out of range (have {d})")));
            }
            let mut w = vec![0.0; d];
            w[i] = 1.0;
            Ok(w)
        }
        PremiumMode::Portfolio => {
            terms.validate(d)?;
            Ok(terms.weights.clone())
        }
    }
}

/// Reduce the scenario set to weighted totals and insured amounts.
pub fn scenario_losses<S: EventSource + ?Sized>(
    source: &S,
    utility: &UtilitySpec,
    terms: &PolicyTerms,
    mode: PremiumMode,
) -> Result<ScenarioLosses> {
    if !(terms.cover > 0.0 && terms.cover <= 1.0) {
        return Err(invalid("cover fraction must lie in (0, 1]"));
    }
    let weights = mode_weights(source.line_count(), terms, mode)?;
    let cap = terms.cover * utility.wealth;
    let rows = par::map_range(source.scenario_count(), |s| {
        let mut total = 0.0;
        let mut insured = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (mut t, mut c) = (0.0, 0.0);
            match terms.cap_mode {
                CapMode::PerEvent => source.visit_events(s, i, &mut |x| {
                    t += x;
                    c += x.min(cap);
                }),
                CapMode::Aggregate => {
                    source.visit_events(s, i, &mut |x| t += x);
                    c = t.min(cap);
                }
            }
            total += w * t;
            insured += w * c;
        }
        (total, insured)
    });
    let (total, insured) = rows.into_iter().unzip();
    Ok(ScenarioLosses { total, insured })
}

fn mean_block(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    par::block_sum(n, f) / n as f64
}

/// Solve the indifference equation on precomputed scenario losses.
pub fn solve_premium(
    losses: &ScenarioLosses,
    utility: &UtilitySpec,
    opts: &SolverOptions,
) -> Result<PremiumQuote> {
    utility.validate()?;
    let n = losses.len();
    if n == 0 {
        return Err(invalid("scenario set is empty"));
    }
    let w = utility.wealth;
    let tol = opts.tolerance(w);
    let retained: Vec<f64> = losses
        .total
        .iter()
        .zip(&losses.insured)
        .map(|(t, c)| t - c)
        .collect();
    let target = mean_block(n, |s| utility.value(w - losses.total[s]));
    let gap = |p: f64| mean_block(n, |s| utility.value(w - p - retained[s])) - target;
    let mean_insured = mean_block(n, |s| losses.insured[s]);
    let quote = |premium: f64, iterations: usize| {
        let d: Vec<f64> = (0..n)
            .map(|s| utility.value(w - losses.total[s]) - utility.value(w - premium - retained[s]))
            .collect();
        let md = d.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let slope = mean_block(n, |s| utility.derivative(w - premium - retained[s]));
        PremiumQuote {
            premium,
            std_error: if slope > 0.0 {
                sd / (n as f64).sqrt() / slope
            } else {
                f64::NAN
            },
            iterations,
            scenarios: n,
            converged: true,
            tolerance: tol,
        }
    };
    if mean_insured <= 0.0 {
        return Ok(quote(0.0, 0));
    }
    let g0 = gap(0.0);
    if g0 < 0.0 {
        return Err(Error::Numerical(
            "no indifference point: utility gap negative at zero premium".into(),
        ));
    }
    let mut hi = 10.0 * mean_insured;
    while gap(hi) > 0.0 {
        if hi >= w {
            return Err(Error::Numerical(format!(
                "no indifference point in [0, {hi}]"
            )));
        }
        hi = (2.0 * hi).min(w);
    }
    let (mut lo, mut iterations) = (0.0, 0);
    while hi - lo > tol {
        if iterations >= opts.max_iterations {
            return Err(Error::Numerical(
                "premium bisection did not converge".into(),
            ));
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(quote(0.5 * (lo + hi), iterations))
}

/// Indifference premium of one line or of the weighted portfolio.
pub fn indifference_premium<S: EventSource + ?Sized>(
    source: &S,
    utility: &UtilitySpec,
    terms: &PolicyTerms,
    mode: PremiumMode,
    opts: &SolverOptions,
) -> Result<PremiumQuote> {
    utility.validate()?;
    let losses = scenario_losses(source, utility, terms, mode)?;
    solve_premium(&losses, utility, opts)
}

/// Minimum number of scenarios in a conditioning set.
pub const MIN_CONDITIONING: usize = 100;

/// Scenarios in which every line other than `target` has an aggregate at or
/// above its own type-1 empirical quantile at `level`.
pub fn conditioning_set<S: EventSource + ?Sized>(
    source: &S,
    target: usize,
    level: f64,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&level) {
        return Err(invalid("conditioning level must lie in [0, 1)"));
    }
    let d = source.line_count();
    if target >= d {
        return Err(invalid(format!("line {target} out of range (have {d})")));
    }
    let n = source.scenario_count();
    let aggregates: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..n).map(|s| source.aggregate(s, i)).collect())
        .collect();
    let thresholds: Vec<f64> = aggregates
        .iter()
        .map(|a| quantile_type1(&sorted(a), level))
        .collect::<Result<_>>()?;
    Ok((0..n)
        .filter(|&s| (0..d).all(|i| i == target || aggregates[i][s] >= thresholds[i]))
        .collect())
}

/// Premium for line `target` on the scenarios where all other lines are at
/// or above their `level` quantiles.
pub fn conditional_premium<S: EventSource + ?Sized>(
    source: &S,
    target: usize,
    level: f64,
    utility: &UtilitySpec,
    terms: &PolicyTerms,
    opts: &SolverOptions,
) -> Result<PremiumQuote> {
    let subset = conditioning_set(source, target, level)?;
    if subset.len() < MIN_CONDITIONING {
        return Err(degenerate(format!(
            "conditioning set too thin: {} scenarios, need {MIN_CONDITIONING}",
            subset.len()
        )));
    }
    let losses = scenario_losses(source, utility, terms, PremiumMode::Line(target))?;
    solve_premium(&losses.select(&subset), utility, opts)
}

/// Type-1 empirical quantile.
pub fn empirical_var(sample: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("VaR level must lie in (0, 1)"));
    }
    quantile_type1(&sorted(sample), level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversificationResult {
    pub ratio: f64,
    pub portfolio_var: f64,
    pub line_vars: Vec<f64>,
    pub level: f64,
    pub ci: Option<(f64, f64)>,
}

/// `VaR(Σ ω_i Z_i) / Σ ω_i VaR(Z_i)` on per-line aggregates, indexed
/// `[line][scenario]`.
pub fn diversification_from_aggregates(
    aggregates: &[Vec<f64>],
    weights: &[f64],
    level: f64,
) -> Result<DiversificationResult> {
    if aggregates.is_empty() || aggregates.len() != weights.len() {
        return Err(invalid("one weight per line is required"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(invalid("weights must be non-negative and sum to one"));
    }
    let n = aggregates[0].len();
    if n == 0 || aggregates.iter().any(|a| a.len() != n) {
        return Err(invalid("line aggregates must be non-empty and aligned"));
    }
    let portfolio: Vec<f64> = (0..n)
        .map(|s| weights.iter().zip(aggregates).map(|(w, a)| w * a[s]).sum())
        .collect();
    let portfolio_var = empirical_var(&portfolio, level)?;
    let line_vars: Vec<f64> = aggregates
        .iter()
        .map(|a| empirical_var(a, level))
        .collect::<Result<_>>()?;
    let denom: f64 = weights.iter().zip(&line_vars).map(|(w, v)| w * v).sum();
    if denom <= 0.0 {
        return Err(degenerate(
            "zero denominator: weighted line VaRs sum to zero",
        ));
    }
    Ok(DiversificationResult {
        ratio: portfolio_var / denom,
        portfolio_var,
        line_vars,
        level,
        ci: None,
    })
}

pub fn diversification_ratio<S: EventSource + ?Sized>(
    source: &S,
    weights: &[f64],
    level: f64,
) -> Result<DiversificationResult> {
    let n = source.scenario_count();
    let aggregates: Vec<Vec<f64>> = (0..source.line_count())
        .map(|i| (0..n).map(|s| source.aggregate(s, i)).collect())
        .collect();
    diversification_from_aggregates(&aggregates, weights, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub point: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// Percentile bootstrap of `statistic` over `n_units` resampling units.
/// The statistic receives the resampled unit indices; replicate `b` draws
/// from its own substream, so the result does not depend on thread count.
pub fn bootstrap_ci<F>(
    n_units: usize,
    replicates: usize,
    level: f64,
    seed: u64,
    statistic: F,
) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    use rand::Rng;

    if replicates < 100 {
        return Err(invalid("bootstrap needs at least 100 replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("confidence level must lie in (0, 1)"));
    }
    if n_units == 0 {
        return Err(invalid("bootstrap needs at least one unit"));
    }
    let identity: Vec<usize> = (0..n_units).collect();
    let point = statistic(&identity)?;
    let seeds = SeedStream::new(seed);
    let values = par::map_range(replicates, |b| {
        let mut rng = seeds.rng("bootstrap", b as u64);
        let idx: Vec<usize> = (0..n_units).map(|_| rng.random_range(0..n_units)).collect();
        statistic(&idx).ok().filter(|v| v.is_finite())
    });
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    let failures = replicates - ok.len();
    if failures * 10 > replicates {
        return Err(Error::Numerical(format!(
            "bootstrap statistic failed on {failures} of {replicates} resamples"
        )));
    }
    let s = sorted(&ok);
    let alpha = 1.0 - level;
    Ok(BootstrapCi {
        low: quantile_type7(&s, alpha / 2.0)?,
        high: quantile_type7(&s, 1.0 - alpha / 2.0)?,
        point,
        replicates,
        failures,
    })
}

/// Settings for recomputing a single-line premium at each cell of a
/// trimmed-Hill sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumSweepConfig {
    /// Poisson frequency per period.
    pub rate: f64,
    pub scenarios: usize,
    pub seed: u64,
    pub utility: UtilitySpec,
    pub cover: f64,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPremium {
    pub k0: usize,
    pub k: usize,
    pub alpha: Option<f64>,
    /// `None` for infeasible or degenerate cells.
    pub quote: Option<PremiumQuote>,
}

/// Premium implied by each sweep cell: a compound Poisson line with Pareto
/// severity (`α` from the cell, `x_min` the sample minimum). Every cell reuses
/// the same random stream, so differences between cells come from `α` alone.
pub fn trim_sweep_premiums(
    sample: &OrderedSample,
    cells: &[SweepCell],
    config: &PremiumSweepConfig,
) -> Result<Vec<SweepPremium>> {
    config.utility.validate()?;
    let terms = PolicyTerms::new(config.cover, vec![1.0]);
    let seeds = SeedStream::new(config.seed).child("premium-sweep");
    cells
        .iter()
        .map(|cell| {
            let alpha = cell.estimate.as_ref().and_then(|e| e.alpha_hat);
            let quote = match alpha {
                Some(alpha) => {
                    let line = LineModel {
                        label: format!("k0={},k={}", cell.k0, cell.k),
                        rate: config.rate,
                        severity: Severity::Pareto {
                            alpha,
                            x_min: sample.min(),
                        },
                    };
                    let table = simulate_line(&line, config.scenarios, seeds)?;
                    Some(indifference_premium(
                        &table,
                        &config.utility,
                        &terms,
                        PremiumMode::Line(0),
                        &config.solver,
                    )?)
                }
                None => None,
            };
            Ok(SweepPremium {
                k0: cell.k0,
                k: cell.k,
                alpha,
                quote,
            })
        })
        .collect()
}

/// One output row of a pricing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingRow {
    pub mode: String,
    pub target: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// CSV rows `mode,target,value,std_error,ci_low,ci_high,settings_hash`.
pub fn write_pricing_csv<W: Write>(out: W, rows: &[PricingRow], settings_hash: &str) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mode",
        "target",
        "value",
        "std_error",
        "ci_low",
        "ci_high",
        "settings_hash",
    ])?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            r.target.clone(),
            format!("{:?}", r.value),
            opt(r.std_error),
            opt(r.ci_low),
            opt(r.ci_high),
            settings_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
