//! Copula-coupled compound loss simulation.
//!
//! Each line is simulated on its own as a table of `J` compound scenarios
//! (a Poisson count of i.i.d. severities and their sum). Coupling draws a
//! copula vector per joint scenario and maps each coordinate through the
//! line's empirical inverse CDF to a table row, carrying that row's event
//! vector along so pricing can apply per-event caps.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};

use crate::copula::{sample_copula, CopulaSpec};
use crate::error::{invalid, Error, Result};
use crate::numeric::type1_rank;
use crate::par;
use crate::rng::SeedStream;

const SCENARIO_BLOCK: usize = 1024;

/// Severity distribution of a single loss event.
#[derive(Debug, Clone, PartialEq)]
pub enum Severity {
    /// Pareto with tail exponent `alpha` and scale `x_min`, sampled by
    /// inversion as `x_min * U^(-1/alpha)`.
    Pareto {
        alpha: f64,
        x_min: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Every event has the same size.
    Constant(f64),
    /// Resample historical losses with replacement.
    Empirical(Arc<[f64]>),
}

impl Severity {
    pub fn validate(&self) -> Result<()> {
        match self {
            Severity::Pareto { alpha, x_min } => {
                if !(alpha.is_finite() && *alpha > 0.0 && x_min.is_finite() && *x_min > 0.0) {
                    return Err(invalid(format!(
                        "pareto severity needs alpha > 0 and x_min > 0 (got {alpha}, {x_min})"
                    )));
                }
            }
            Severity::LogNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return Err(invalid("lognormal severity needs finite mu and sigma > 0"));
                }
            }
            Severity::Constant(v) => {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(invalid("constant severity must be positive"));
                }
            }
            Severity::Empirical(xs) => {
                if xs.is_empty() || xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(invalid("empirical severity needs positive finite losses"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Severity::Pareto { alpha, x_min } => {
                let u: f64 = rng.sample(Open01);
                x_min * u.powf(-1.0 / alpha)
            }
            Severity::LogNormal { mu, sigma } => LogNormal::new(*mu, *sigma)
                .expect("validated lognormal parameters")
                .sample(rng),
            Severity::Constant(v) => *v,
            Severity::Empirical(xs) => xs[rng.random_range(0..xs.len())],
        }
    }

    /// Expected severity, when finite.
    pub fn mean(&self) -> Option<f64> {
        match self {
            Severity::Pareto { alpha, x_min } => {
                (*alpha > 1.0).then(|| alpha * x_min / (alpha - 1.0))
            }
            Severity::LogNormal { mu, sigma } => Some((mu + 0.5 * sigma * sigma).exp()),
            Severity::Constant(v) => Some(*v),
            Severity::Empirical(xs) => Some(xs.iter().sum::<f64>() / xs.len() as f64),
        }
    }
}

/// One insurance line: a Poisson frequency and a severity source.
#[derive(Debug, Clone, PartialEq)]
pub struct LineModel {
    pub label: String,
    /// Expected number of events per period.
    pub rate: f64,
    pub severity: Severity,
}

impl LineModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(invalid(format!(
                "line '{}': frequency rate must be finite and >= 0",
                self.label
            )));
        }
        self.severity.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompoundModel {
    pub lines: Vec<LineModel>,
}

/// `J` simulated compound scenarios of one line.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    label: String,
    aggregates: Vec<f64>,
    offsets: Vec<usize>,
    events: Vec<f64>,
    order: Vec<u32>,
}

impl AggregateTable {
    /// Build a table from explicit event vectors (one per scenario).
    pub fn from_event_vectors(label: impl Into<String>, scenarios: Vec<Vec<f64>>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(invalid("aggregate table needs at least one scenario"));
        }
        if scenarios.len() > u32::MAX as usize {
            return Err(invalid("too many scenarios"));
        }
        let mut offsets = Vec::with_capacity(scenarios.len() + 1);
        let mut events = Vec::new();
        offsets.push(0);
        for s in &scenarios {
            if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(invalid("event losses must be finite and non-negative"));
            }
            events.extend_from_slice(s);
            offsets.push(events.len());
        }
        Ok(Self::assemble(label.into(), offsets, events))
    }

    fn assemble(label: String, offsets: Vec<usize>, events: Vec<f64>) -> Self {
        let j = offsets.len() - 1;
        let aggregates: Vec<f64> = (0..j)
            .map(|s| events[offsets[s]..offsets[s + 1]].iter().sum())
            .collect();
        let mut order: Vec<u32> = (0..j as u32).collect();
        order.sort_by(|&a, &b| {
            aggregates[a as usize]
                .total_cmp(&aggregates[b as usize])
                .then(a.cmp(&b))
        });
        Self {
            label,
            aggregates,
            offsets,
            events,
            order,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.aggregates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregates.is_empty()
    }

    pub fn aggregate(&self, scenario: usize) -> f64 {
        self.aggregates[scenario]
    }

    pub fn aggregates(&self) -> &[f64] {
        &self.aggregates
    }

    pub fn events(&self, scenario: usize) -> &[f64] {
        &self.events[self.offsets[scenario]..self.offsets[scenario + 1]]
    }

    /// Scenario indices ordered by increasing aggregate (ties by index).
    pub fn sorted_order(&self) -> &[u32] {
        &self.order
    }

    /// Empirical CDF `#{j : Z_j <= z} / J`.
    pub fn cdf(&self, z: f64) -> f64 {
        let count = self
            .order
            .partition_point(|&j| self.aggregates[j as usize] <= z);
        count as f64 / self.len() as f64
    }
}

/// Simulate `scenarios` compound draws of `line`.
pub fn simulate_line(
    line: &LineModel,
    scenarios: usize,
    seeds: SeedStream,
) -> Result<AggregateTable> {
    line.validate()?;
    if scenarios == 0 {
        return Err(invalid("at least one scenario is required"));
    }
    if scenarios > u32::MAX as usize {
        return Err(invalid("too many scenarios"));
    }
    let blocks = scenarios.div_ceil(SCENARIO_BLOCK);
    let poisson = if line.rate > 0.0 {
        Some(Poisson::new(line.rate).map_err(|e| invalid(format!("poisson rate: {e}")))?)
    } else {
        None
    };
    let parts: Vec<(Vec<usize>, Vec<f64>)> = par::map_range(blocks, |b| {
        let mut rng = seeds.rng("compound-marginal", b as u64);
        let lo = b * SCENARIO_BLOCK;
        let hi = (lo + SCENARIO_BLOCK).min(scenarios);
        let mut counts = Vec::with_capacity(hi - lo);
        let mut events = Vec::new();
        for _ in lo..hi {
            let n = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            counts.push(n);
            for _ in 0..n {
                events.push(line.severity.sample(&mut rng));
            }
        }
        (counts, events)
    });
    let mut offsets = Vec::with_capacity(scenarios + 1);
    let total: usize = parts.iter().map(|p| p.1.len()).sum();
    let mut events = Vec::with_capacity(total);
    offsets.push(0);
    for (counts, ev) in parts {
        let mut at = events.len();
        for c in counts {
            at += c;
            offsets.push(at);
        }
        events.extend(ev);
    }
    Ok(AggregateTable::assemble(
        line.label.clone(),
        offsets,
        events,
    ))
}

/// Simulate line `line` of `model` with a per-line substream of `seed`.
pub fn simulate_marginal(
    model: &CompoundModel,
    line: usize,
    scenarios: usize,
    seed: u64,
) -> Result<AggregateTable> {
    let m = model
        .lines
        .get(line)
        .ok_or_else(|| invalid(format!("line index {line} out of range")))?;
    simulate_line(
        m,
        scenarios,
        SeedStream::new(seed).child(&format!("line-{line}")),
    )
}

/// Simulate every line of `model`.
pub fn simulate_all(
    model: &CompoundModel,
    scenarios: usize,
    seed: u64,
) -> Result<Vec<AggregateTable>> {
    (0..model.lines.len())
        .map(|i| simulate_marginal(model, i, scenarios, seed))
        .collect()
}

/// Smallest sorted scenario whose empirical CDF value is at least `u`,
/// i.e. the `ceil(u J)`-th smallest aggregate. Returns its scenario index.
pub fn empirical_inverse(table: &AggregateTable, u: f64) -> Result<usize> {
    if table.is_empty() {
        return Err(invalid("empirical inverse of an empty table"));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid(format!("copula coordinate {u} must lie in (0, 1)")));
    }
    Ok(table.order[type1_rank(u, table.len()) - 1] as usize)
}

/// Coupled draws across lines; each joint scenario may span several periods
/// (for example four coupled quarters forming a year).
#[derive(Debug, Clone)]
pub struct JointScenarioSet<'a> {
    tables: &'a [AggregateTable],
    periods: usize,
    scenarios: usize,
    /// Row-major `[scenario][period][line]` table indices.
    indices: Vec<u32>,
    copula: CopulaSpec,
}

impl<'a> JointScenarioSet<'a> {
    pub fn scenario_count(&self) -> usize {
        self.scenarios
    }

    pub fn line_count(&self) -> usize {
        self.tables.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn copula(&self) -> &CopulaSpec {
        &self.copula
    }

    pub fn tables(&self) -> &'a [AggregateTable] {
        self.tables
    }

    /// Table index selected for `(scenario, period, line)`.
    pub fn index(&self, scenario: usize, period: usize, line: usize) -> usize {
        let d = self.tables.len();
        self.indices[(scenario * self.periods + period) * d + line] as usize
    }

    /// Aggregate loss of `line` in `scenario`, summed over periods.
    pub fn aggregate(&self, scenario: usize, line: usize) -> f64 {
        (0..self.periods)
            .map(|p| self.tables[line].aggregate(self.index(scenario, p, line)))
            .sum()
    }

    /// Every event of `line` in `scenario`, period by period.
    pub fn events(&self, scenario: usize, line: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.periods).flat_map(move |p| {
            self.tables[line]
                .events(self.index(scenario, p, line))
                .iter()
                .copied()
        })
    }

    /// Aggregates of `line` across all scenarios.
    pub fn line_aggregates(&self, line: usize) -> Vec<f64> {
        (0..self.scenarios)
            .map(|s| self.aggregate(s, line))
            .collect()
    }

    /// Write the audit dump: `u64` line count, `u64` scenario count, `u64`
    /// period count, then per scenario, period and line a `u64` table index
    /// and an `f64` aggregate, all little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.tables.len();
        out.write_all(&(d as u64).to_le_bytes())?;
        out.write_all(&(self.scenarios as u64).to_le_bytes())?;
        out.write_all(&(self.periods as u64).to_le_bytes())?;
        for s in 0..self.scenarios {
            for p in 0..self.periods {
                for i in 0..d {
                    let j = self.index(s, p, i);
                    out.write_all(&(j as u64).to_le_bytes())?;
                    out.write_all(&self.tables[i].aggregate(j).to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// A decoded scenario dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDump {
    pub lines: usize,
    pub scenarios: usize,
    pub periods: usize,
    /// `(table index, aggregate)` in `[scenario][period][line]` order.
    pub records: Vec<(u64, f64)>,
}

pub fn read_dump<R: Read>(mut input: R) -> Result<ScenarioDump> {
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8]> {
        input.read_exact(&mut word)?;
        Ok(word)
    };
    let lines = u64::from_le_bytes(next(&mut input)?) as usize;
    let scenarios = u64::from_le_bytes(next(&mut input)?) as usize;
    let periods = u64::from_le_bytes(next(&mut input)?) as usize;
    let count = lines
        .checked_mul(scenarios)
        .and_then(|v| v.checked_mul(periods))
        .ok_or_else(|| Error::Format("dump header overflows".into()))?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let j = u64::from_le_bytes(next(&mut input)?);
        let z = f64::from_le_bytes(next(&mut input)?);
        records.push((j, z));
    }
    Ok(ScenarioDump {
        lines,
        scenarios,
        periods,
        records,
    })
}

/// Couple `tables` through `copula` into `scenarios` joint draws (one period).
pub fn couple_scenarios<'a>(
    tables: &'a [AggregateTable],
    copula: &CopulaSpec,
    scenarios: usize,
    seed: u64,
) -> Result<JointScenarioSet<'a>> {
    couple_periods(tables, copula, scenarios, 1, seed)
}

/// Couple `periods` independent copula draws per joint scenario. Period `p`
/// of every scenario uses its own copula sample, so annual scenarios built
/// from four quarters have independently coupled quarters.
pub fn couple_periods<'a>(
    tables: &'a [AggregateTable],
    copula: &CopulaSpec,
    scenarios: usize,
    periods: usize,
    seed: u64,
) -> Result<JointScenarioSet<'a>> {
    let d = tables.len();
    if d == 0 {
        return Err(invalid("coupling needs at least one line"));
    }
    if copula.dim() != d {
        return Err(invalid(format!(
            "copula dimension {} does not match {} lines",
            copula.dim(),
            d
        )));
    }
    if tables.iter().any(AggregateTable::is_empty) {
        return Err(invalid("every aggregate table must be non-empty"));
    }
    if scenarios == 0 || periods == 0 {
        return Err(invalid("scenario and period counts must be positive"));
    }
    let seeds = SeedStream::new(seed);
    let draws = (0..periods)
        .map(|p| sample_copula(copula, scenarios, seeds.child(&format!("period-{p}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut indices = vec![0u32; scenarios * periods * d];
    let row = periods * d;
    par::for_each_block_mut(&mut indices, SCENARIO_BLOCK * row, |b, chunk| {
        for (k, slot) in chunk.chunks_mut(row).enumerate() {
            let s = b * SCENARIO_BLOCK + k;
            for (p, draw) in draws.iter().enumerate() {
                let u = draw.row(s);
                for i in 0..d {
                    let j = tables[i].order[type1_rank(u[i], tables[i].len()) - 1];
                    slot[p * d + i] = j;
                }
            }
        }
    });
    Ok(JointScenarioSet {
        tables,
        periods,
        scenarios,
        indices,
        copula: copula.clone(),
    })
}
