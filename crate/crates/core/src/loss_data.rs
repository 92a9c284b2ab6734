//! Loss-event ingestion, sector partitioning, quarterly aggregation and
//! synthetic loss panels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::compound::{couple_scenarios, simulate_line, AggregateTable, LineModel, Severity};
use crate::copula::CopulaSpec;
use crate::error::{invalid, Error, Result};
use crate::numeric::exact_sum;
use crate::rng::SeedStream;

/// Two-digit industry sector code (NAIC style), e.g. `"52"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SectorCode(String);

impl SectorCode {
    pub fn new(code: &str) -> Result<Self> {
        let c = code.trim();
        if c.len() == 2 && c.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Self(c.to_string()))
        } else {
            Err(invalid(format!("sector code '{code}' is not two digits")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SectorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEvent {
    pub event_id: String,
    pub accident_date: NaiveDate,
    pub sector: SectorCode,
    /// Total loss in USD, strictly positive.
    pub total_loss: f64,
}

/// Column names and formats of a delimited loss file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub delimiter: u8,
    /// Identifier column; row numbers are used when absent.
    pub id_column: Option<String>,
    pub date_column: String,
    pub sector_column: String,
    pub loss_column: String,
    /// `chrono` format string for the date column.
    pub date_format: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            delimiter: b',',
            id_column: Some("event_id".into()),
            date_column: "accident_date".into(),
            sector_column: "sector".into(),
            loss_column: "total_loss".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

/// Parsed events plus the number of rows rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub events: Vec<LossEvent>,
    pub dropped: usize,
}

/// Parse delimited loss records. Rows with an unparseable date, an invalid
/// sector code, or a missing, non-numeric or non-positive loss are skipped
/// and counted; a header lacking a required column is a hard error.
pub fn parse_loss_records<R: Read>(input: R, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("header lacks column '{name}'")))
    };
    let date_col = find(&schema.date_column)?;
    let sector_col = find(&schema.sector_column)?;
    let loss_col = find(&schema.loss_column)?;
    let id_col = schema.id_column.as_deref().map(find).transpose()?;

    let mut events = Vec::new();
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let Ok(record) = record else {
            dropped += 1;
            continue;
        };
        let parsed = (|| {
            let date =
                NaiveDate::parse_from_str(record.get(date_col)?, &schema.date_format).ok()?;
            let sector = SectorCode::new(record.get(sector_col)?).ok()?;
            let loss: f64 = record.get(loss_col)?.parse().ok()?;
            if !(loss.is_finite() && loss > 0.0) {
                return None;
            }
            let event_id = match id_col {
                Some(c) => record.get(c)?.to_string(),
                None => (row + 1).to_string(),
            };
            Some(LossEvent {
                event_id,
                accident_date: date,
                sector,
                total_loss: loss,
            })
        })();
        match parsed {
            Some(e) => events.push(e),
            None => dropped += 1,
        }
    }
    Ok(ParseOutcome { events, dropped })
}

/// Write events in the default schema (ISO dates, shortest round-trip floats).
pub fn write_loss_records<W: Write>(out: W, events: &[LossEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "accident_date", "sector", "total_loss"])?;
    for e in events {
        w.write_record([
            e.event_id.clone(),
            e.accident_date.format("%Y-%m-%d").to_string(),
            e.sector.to_string(),
            format!("{:?}", e.total_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inclusive date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(invalid(format!("window start {start} is after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    /// Every calendar quarter touched by the window, in order.
    pub fn quarters(&self) -> Vec<Quarter> {
        let first = Quarter::of(self.start);
        let last = Quarter::of(self.end);
        let mut out = Vec::new();
        let mut q = first;
        while q <= last {
            out.push(q);
            q = q.next();
        }
        out
    }
}

/// Keep events with `start <= accident_date <= end`.
pub fn filter_window(
    events: &[LossEvent],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<LossEvent>> {
    let w = Window::new(start, end)?;
    Ok(events
        .iter()
        .filter(|e| w.contains(e.accident_date))
        .cloned()
        .collect())
}

/// Calendar quarter; Q1 is January to March.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(invalid(format!("quarter index {quarter} outside 1..=4")));
        }
        Ok(Self { year, quarter })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            quarter: ((date.month0() / 3) + 1) as u8,
        }
    }

    pub fn next(self) -> Self {
        if self.quarter == 4 {
            Self {
                year: self.year + 1,
                quarter: 1,
            }
        } else {
            Self {
                year: self.year,
                quarter: self.quarter + 1,
            }
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, u32::from(self.quarter - 1) * 3 + 1, 1)
            .expect("valid quarter start")
    }

    pub fn last_day(self) -> NaiveDate {
        self.next().first_day() - Duration::days(1)
    }
}

/// Events partitioned by sector, each sector sorted by accident date.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorPanel {
    pub window: Window,
    sectors: BTreeMap<SectorCode, Vec<LossEvent>>,
}

impl SectorPanel {
    /// Partition `events` inside `window` by sector; events outside are dropped.
    pub fn from_events(events: Vec<LossEvent>, window: Window) -> Self {
        let mut sectors: BTreeMap<SectorCode, Vec<LossEvent>> = BTreeMap::new();
        for e in events
            .into_iter()
            .filter(|e| window.contains(e.accident_date))
        {
            sectors.entry(e.sector.clone()).or_default().push(e);
        }
        for v in sectors.values_mut() {
            v.sort_by(|a, b| {
                a.accident_date
                    .cmp(&b.accident_date)
                    .then_with(|| a.event_id.cmp(&b.event_id))
            });
        }
        Self { window, sectors }
    }

    pub fn sectors(&self) -> impl Iterator<Item = &SectorCode> {
        self.sectors.keys()
    }

    pub fn events(&self, sector: &SectorCode) -> &[LossEvent] {
        self.sectors.get(sector).map_or(&[], Vec::as_slice)
    }

    /// All events, sector by sector.
    pub fn all_events(&self) -> Vec<LossEvent> {
        self.sectors.values().flatten().cloned().collect()
    }

    pub fn losses(&self, sector: &SectorCode) -> Vec<f64> {
        self.events(sector).iter().map(|e| e.total_loss).collect()
    }

    pub fn quarterly(&self, sector: &SectorCode) -> QuarterlySeries {
        aggregate_quarterly(sector.clone(), self.events(sector), self.window)
    }
}

/// Per-quarter aggregate loss and event count of one sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterlySeries {
    pub sector: SectorCode,
    pub quarters: Vec<Quarter>,
    pub aggregates: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Aggregate one sector's events into contiguous quarters over `window`.
/// Quarters without events carry zero. Per-quarter sums are correctly rounded.
pub fn aggregate_quarterly(
    sector: SectorCode,
    events: &[LossEvent],
    window: Window,
) -> QuarterlySeries {
    let quarters = window.quarters();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); quarters.len()];
    let first = quarters.first().copied();
    for e in events.iter().filter(|e| window.contains(e.accident_date)) {
        let q = Quarter::of(e.accident_date);
        if let Some(f) = first {
            let idx = (q.year - f.year) as usize * 4 + q.quarter as usize - f.quarter as usize;
            buckets[idx].push(e.total_loss);
        }
    }
    let counts = buckets.iter().map(|b| b.len() as u64).collect();
    let aggregates = buckets.into_iter().map(exact_sum).collect();
    QuarterlySeries {
        sector,
        quarters,
        aggregates,
        counts,
    }
}

/// Write quarterly series as CSV: `sector,year,quarter,aggregate_loss,count`.
pub fn write_quarterly_csv<W: Write>(out: W, series: &[QuarterlySeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sector", "year", "quarter", "aggregate_loss", "count"])?;
    for s in series {
        for ((q, a), c) in s.quarters.iter().zip(&s.aggregates).zip(&s.counts) {
            w.write_record([
                s.sector.to_string(),
                q.year.to_string(),
                q.quarter.to_string(),
                format!("{a:?}"),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Poisson maximum-likelihood rate: the mean count per quarter.
pub fn fit_poisson_rate(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(invalid("cannot fit a Poisson rate to an empty series"));
    }
    Ok(counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64)
}

/// Multiply a block of top-ranked losses of a line by a factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub count: usize,
    pub multiplier: f64,
}

/// One synthetic line of business.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLine {
    pub sector: SectorCode,
    /// Expected events per quarter.
    pub rate: f64,
    pub severity: Severity,
    /// Contamination tiers applied to consecutive rank blocks from the top:
    /// the first tier hits the largest `count` losses, the next tier the
    /// following block, and so on.
    pub contamination: Vec<Contamination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub lines: Vec<SyntheticLine>,
    /// Copula coupling the lines' quarterly aggregates; independent if `None`.
    pub coupling: Option<CopulaSpec>,
    pub start: Quarter,
    pub quarters: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lines.is_empty() {
            return Err(invalid("synthetic panel needs at least one line"));
        }
        if self.quarters == 0 {
            return Err(invalid("synthetic panel needs at least one quarter"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.lines {
            if !seen.insert(l.sector.clone()) {
                return Err(invalid(format!("duplicate sector {}", l.sector)));
            }
            LineModel {
                label: l.sector.to_string(),
                rate: l.rate,
                severity: l.severity.clone(),
            }
            .validate()?;
            let expected = l.rate * self.quarters as f64;
            let corrupted: usize = l.contamination.iter().map(|c| c.count).sum();
            if corrupted > 0 && corrupted as f64 >= expected {
                return Err(invalid(format!(
                    "sector {}: contamination count {corrupted} must be below the expected {expected} events",
                    l.sector
                )));
            }
            if l.contamination
                .iter()
                .any(|c| !(c.multiplier.is_finite() && c.multiplier > 0.0))
            {
                return Err(invalid("contamination multipliers must be positive"));
            }
        }
        if let Some(c) = &self.coupling {
            c.validate()?;
            if c.dim() != self.lines.len() {
                return Err(invalid(
                    "coupling copula dimension must equal the number of lines",
                ));
            }
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        let mut last = self.start;
        for _ in 1..self.quarters {
            last = last.next();
        }
        Window {
            start: self.start.first_day(),
            end: last.last_day(),
        }
    }
}

/// Generate a synthetic sector panel. Per quarter and line the event count is
/// Poisson and severities are i.i.d.; with a coupling copula the quarterly
/// aggregates of all lines are coupled through the compound engine.
pub fn generate_synthetic_panel(spec: &SyntheticSpec) -> Result<SectorPanel> {
    spec.validate()?;
    let seeds = SeedStream::new(spec.seed);
    let quarters = spec.window().quarters();
    let tables: Vec<AggregateTable> = spec
        .lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let model = LineModel {
                label: l.sector.to_string(),
                rate: l.rate,
                severity: l.severity.clone(),
            };
            simulate_line(
                &model,
                spec.quarters,
                seeds.child(&format!("synthetic-line-{i}")),
            )
        })
        .collect::<Result<_>>()?;

    let picks: Vec<Vec<usize>> = match &spec.coupling {
        Some(copula) => {
            let joint = couple_scenarios(
                &tables,
                copula,
                spec.quarters,
                seeds.child("synthetic-coupling").master(),
            )?;
            (0..tables.len())
                .map(|i| (0..spec.quarters).map(|q| joint.index(q, 0, i)).collect())
                .collect()
        }
        None => vec![(0..spec.quarters).collect(); tables.len()],
    };

    let mut events = Vec::new();
    for (i, line) in spec.lines.iter().enumerate() {
        let mut line_events = Vec::new();
        for (q, quarter) in quarters.iter().enumerate() {
            let losses = tables[i].events(picks[i][q]);
            let days = (quarter.last_day() - quarter.first_day()).num_days() + 1;
            let n = losses.len() as i64;
            for (k, &loss) in losses.iter().enumerate() {
                let offset = (k as i64 + 1) * days / (n + 1);
                line_events.push(LossEvent {
                    event_id: format!("{}-{:04}-{:03}", line.sector, q, k),
                    accident_date: quarter.first_day() + Duration::days(offset.min(days - 1)),
                    sector: line.sector.clone(),
                    total_loss: loss,
                });
            }
        }
        contaminate(&mut line_events, &line.contamination);
        events.extend(line_events);
    }
    Ok(SectorPanel::from_events(events, spec.window()))
}

fn contaminate(events: &mut [LossEvent], tiers: &[Contamination]) {
    if tiers.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[b]
            .total_loss
            .total_cmp(&events[a].total_loss)
            .then(a.cmp(&b))
    });
    let mut at = 0;
    for tier in tiers {
        for &idx in order.iter().skip(at).take(tier.count) {
            events[idx].total_loss *= tier.multiplier;
        }
        at += tier.count;
    }
}

/// Historical losses of a sector as a resampling severity source.
pub fn empirical_severity(losses: &[f64]) -> Severity {
    Severity::Empirical(Arc::from(losses))
}
