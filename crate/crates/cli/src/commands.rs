use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use cyrisk::compound::{
    couple_periods, simulate_all, AggregateTable, CompoundModel, LineModel, Severity,
};
use cyrisk::copula::{
    pseudo_observations, select_structure, write_structure_report, CopulaSpec, FitOptions,
    PairBlock, PairCopula, PairFamily,
};
use cyrisk::dependence::{
    correlation_matrix, nearest_psd, write_correlation_csv, ConsistencyFactor, CorrelationMethod,
    DependenceConfig, McdConfig, PsiKind, RobustConfig, DEFAULT_EIGEN_FLOOR,
};
use cyrisk::extremal::{default_levels, extremogram_matrix, Variant, DEFAULT_MAX_LAG};
use cyrisk::loss_data::{
    empirical_severity, fit_poisson_rate, generate_synthetic_panel, parse_loss_records,
    write_loss_records, write_quarterly_csv, Contamination, Quarter, SchemaConfig, SectorCode,
    SectorPanel, SyntheticLine, SyntheticSpec, Window,
};
use cyrisk::numeric::median;
use cyrisk::pricing::{
    bootstrap_ci, diversification_from_aggregates, scenario_losses, solve_premium,
    trim_sweep_premiums, write_pricing_csv, CapMode, PolicyTerms, PremiumMode, PremiumSweepConfig,
    PricingRow, SolverOptions, UtilityKind, UtilitySpec,
};
use cyrisk::tail_index::{
    ecf_regression, hill, hill_plot_data, ls_estimator, mle_pareto, pareto_qq,
    percentile_pair_estimator, pm_estimator, qq_fit, smoothed_hill, trimmed_hill_optimal,
    trimmed_hill_sweep, wls_estimator, write_estimates_csv, EcfRegressionConfig, EstimateFlag,
    Method, OrderedSample, TailIndexEstimate,
};
use cyrisk::SeedStream;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::args::*;
use crate::error::CliError;
use crate::settings::{settings_hash, Artifacts};

type CmdResult = Result<Value, CliError>;

fn v(msg: impl Into<String>) -> CliError {
    CliError::validation(msg)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> cyrisk::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn parse_date(s: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| v(format!("invalid date '{s}': {e}")))
}

fn check_unit(name: &str, x: f64) -> Result<(), CliError> {
    if !(x > 0.0 && x < 1.0) {
        return Err(v(format!("{name} must lie in (0, 1), got {x}")));
    }
    Ok(())
}

/// A loaded panel restricted to the requested sectors.
struct Panel {
    panel: SectorPanel,
    sectors: Vec<SectorCode>,
    input: PathBuf,
}

impl Panel {
    fn labels(&self) -> Vec<String> {
        self.sectors.iter().map(|s| s.to_string()).collect()
    }

    fn quarterly_aggregates(&self) -> Vec<Vec<f64>> {
        self.sectors
            .iter()
            .map(|s| self.panel.quarterly(s).aggregates)
            .collect()
    }
}

fn window_of(
    events: &[cyrisk::loss_data::LossEvent],
    start: Option<&str>,
    end: Option<&str>,
) -> Result<Window, CliError> {
    let lo = events.iter().map(|e| e.accident_date).min();
    let hi = events.iter().map(|e| e.accident_date).max();
    let start = match start {
        Some(s) => parse_date(s)?,
        None => Quarter::of(lo.ok_or_else(|| v("input has no valid events"))?).first_day(),
    };
    let end = match end {
        Some(s) => parse_date(s)?,
        None => Quarter::of(hi.ok_or_else(|| v("input has no valid events"))?).last_day(),
    };
    Ok(Window::new(start, end)?)
}

fn load_panel(args: &PanelArgs, schema: &SchemaConfig) -> Result<(Panel, usize), CliError> {
    let input = args.input.clone().ok_or_else(|| v("--input is required"))?;
    let file =
        File::open(&input).map_err(|e| v(format!("cannot open {}: {e}", input.display())))?;
    let parsed = parse_loss_records(file, schema)?;
    let window = window_of(&parsed.events, args.start.as_deref(), args.end.as_deref())?;
    let panel = SectorPanel::from_events(parsed.events, window);
    let sectors: Vec<SectorCode> = match &args.sectors {
        Some(list) => {
            let codes = list
                .iter()
                .map(|s| SectorCode::new(s))
                .collect::<cyrisk::Result<Vec<_>>>()?;
            for c in &codes {
                if panel.events(c).is_empty() {
                    return Err(v(format!("sector {c} has no events in the window")));
                }
            }
            codes
        }
        None => panel.sectors().cloned().collect(),
    };
    if sectors.is_empty() {
        return Err(v("no sectors with events in the window"));
    }
    Ok((
        Panel {
            panel,
            sectors,
            input,
        },
        parsed.dropped,
    ))
}

fn load(args: &PanelArgs) -> Result<Panel, CliError> {
    Ok(load_panel(args, &SchemaConfig::default())?.0)
}

// ---------------------------------------------------------------- synth

const DEFAULT_SECTORS: [&str; 5] = ["51", "52", "54", "56", "92"];

pub fn synth(a: &SynthArgs, out: &Path) -> CmdResult {
    let lines = a.lines.unwrap_or(5);
    if lines == 0 {
        return Err(v("--lines must be positive"));
    }
    let sectors: Vec<String> = match &a.sectors {
        Some(s) if s.len() == lines => s.clone(),
        Some(s) => {
            return Err(v(format!(
                "{} sector codes given for {lines} lines",
                s.len()
            )))
        }
        None => DEFAULT_SECTORS
            .iter()
            .map(|s| s.to_string())
            .chain(
                (10..100)
                    .map(|i| i.to_string())
                    .filter(|c| !DEFAULT_SECTORS.contains(&c.as_str())),
            )
            .take(lines)
            .collect(),
    };
    let severity = match a.severity.as_deref().unwrap_or("pareto") {
        "pareto" => Severity::Pareto {
            alpha: a.alpha.unwrap_or(1.2),
            x_min: a.x_min.unwrap_or(1e5),
        },
        "lognormal" => Severity::LogNormal {
            mu: a.mu.unwrap_or(11.0),
            sigma: a.sigma.unwrap_or(1.5),
        },
        other => return Err(v(format!("unknown severity '{other}'"))),
    };
    let contamination = a
        .contaminate
        .iter()
        .flatten()
        .map(|t| {
            let (c, m) = t
                .split_once('x')
                .ok_or_else(|| v(format!("contamination '{t}' must look like 5x1000")))?;
            Ok(Contamination {
                count: c
                    .parse()
                    .map_err(|_| v(format!("bad contamination count in '{t}'")))?,
                multiplier: m
                    .parse()
                    .map_err(|_| v(format!("bad contamination multiplier in '{t}'")))?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let theta = a.theta.unwrap_or(2.0);
    let pair_copula = |survival: bool| {
        if survival {
            PairCopula::SurvivalJoe { theta }
        } else {
            PairCopula::Joe { theta }
        }
    };
    let coupling = match a.coupling.as_deref().unwrap_or("independence") {
        "independence" => None,
        "gaussian" => {
            let rho = a.rho.unwrap_or(0.5);
            Some(CopulaSpec::Gaussian {
                corr: DMatrix::from_fn(lines, lines, |i, j| if i == j { 1.0 } else { rho }),
            })
        }
        kind @ ("joe-pairs" | "survival-joe-pairs") => {
            let survival = kind.starts_with("survival");
            Some(CopulaSpec::PairProduct {
                dim: lines,
                pairs: (0..lines / 2)
                    .map(|p| PairBlock {
                        first: 2 * p,
                        second: 2 * p + 1,
                        copula: pair_copula(survival),
                    })
                    .collect(),
                singleton: (lines % 2 == 1).then_some(lines - 1),
            })
        }
        other => return Err(v(format!("unknown coupling '{other}'"))),
    };
    let spec = SyntheticSpec {
        lines: sectors
            .iter()
            .map(|s| {
                Ok(SyntheticLine {
                    sector: SectorCode::new(s)?,
                    rate: a.rate.unwrap_or(4.0),
                    severity: severity.clone(),
                    contamination: contamination.clone(),
                })
            })
            .collect::<cyrisk::Result<_>>()?,
        coupling,
        start: Quarter::new(a.start_year.unwrap_or(2000), 1)?,
        quarters: a.quarters.unwrap_or(120),
        seed: a.seed.unwrap_or(0),
    };
    spec.validate()?;
    let panel = generate_synthetic_panel(&spec)?;
    let events = panel.all_events();
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("synth", a, &[])?);
    art.csv(
        "synth_events.csv",
        csv_bytes(|b| write_loss_records(b, &events))?,
    );
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "events": events.len(),
        "sectors": sectors,
        "outputs": art.write()?,
    }))
}

// ---------------------------------------------------------------- ingest

pub fn ingest(a: &IngestArgs, out: &Path) -> CmdResult {
    let mut schema = SchemaConfig::default();
    if let Some(d) = &a.delimiter {
        let b = d.as_bytes();
        if b.len() != 1 {
            return Err(v("--delimiter must be a single byte"));
        }
        schema.delimiter = b[0];
    }
    if let Some(f) = &a.date_format {
        schema.date_format = f.clone();
    }
    if let Some(c) = &a.id_column {
        schema.id_column = if c.is_empty() { None } else { Some(c.clone()) };
    }
    if let Some(c) = &a.date_column {
        schema.date_column = c.clone();
    }
    if let Some(c) = &a.sector_column {
        schema.sector_column = c.clone();
    }
    if let Some(c) = &a.loss_column {
        schema.loss_column = c.clone();
    }
    let (p, dropped) = load_panel(&a.panel, &schema)?;
    let events: Vec<_> = p
        .sectors
        .iter()
        .flat_map(|s| p.panel.events(s).iter().cloned())
        .collect();
    let series: Vec<_> = p.sectors.iter().map(|s| p.panel.quarterly(s)).collect();
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("ingest", a, &[&p.input])?);
    art.csv("events.csv", csv_bytes(|b| write_loss_records(b, &events))?);
    art.csv(
        "quarterly.csv",
        csv_bytes(|b| write_quarterly_csv(b, &series))?,
    );
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "events": events.len(),
        "dropped": dropped,
        "sectors": p.labels(),
        "quarters": series.first().map_or(0, |s| s.quarters.len()),
        "outputs": art.write()?,
    }))
}

// ---------------------------------------------------------------- summary

pub fn summary(a: &SummaryArgs, out: &Path) -> CmdResult {
    let p = load(&a.panel)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| v(e.to_string());
    w.write_record([
        "sector",
        "events",
        "total_loss",
        "mean_loss",
        "median_loss",
        "max_loss",
        "quarters",
        "rate",
    ])
    .map_err(row_err)?;
    for s in &p.sectors {
        let losses = p.panel.losses(s);
        let q = p.panel.quarterly(s);
        let total = cyrisk::numeric::exact_sum(losses.iter().copied());
        w.write_record([
            s.to_string(),
            losses.len().to_string(),
            format!("{total:?}"),
            format!("{:?}", total / losses.len() as f64),
            format!("{:?}", median(&losses)),
            format!("{:?}", losses.iter().copied().fold(f64::MIN, f64::max)),
            q.quarters.len().to_string(),
            format!("{:?}", fit_poisson_rate(&q.counts)?),
        ])
        .map_err(row_err)?;
    }
    let body = w.into_inner().map_err(|e| v(e.to_string()))?;
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("summary", a, &[&p.input])?);
    art.csv("summary.csv", body);
    let hash = art.hash().to_string();
    Ok(json!({"settings_hash": hash, "sectors": p.labels(), "outputs": art.write()?}))
}

// ---------------------------------------------------------------- tailfit

const ALL_METHODS: [&str; 10] = [
    "hill",
    "smoothed-hill",
    "trimmed-hill-opt",
    "mle",
    "mle-unbiased",
    "ls",
    "wls",
    "pm",
    "ecf",
    "pareto-qq",
];

fn default_k(n: usize) -> usize {
    (n / 10).max(2)
}

fn failed(method: Method, k0: Option<usize>, k: Option<usize>) -> TailIndexEstimate {
    TailIndexEstimate {
        method,
        alpha_hat: None,
        xi_hat: None,
        scale: None,
        k,
        k0,
        std_error: None,
        flags: vec![EstimateFlag::Degenerate],
    }
}

fn run_method(
    name: &str,
    s: &OrderedSample,
    a: &TailfitArgs,
) -> Result<TailIndexEstimate, CliError> {
    let n = s.len();
    let k = a.k.unwrap_or_else(|| default_k(n));
    let k0 = a.k0.unwrap_or(0);
    let r = a.r.unwrap_or(2);
    let est = match name {
        "hill" => hill(s, k),
        "smoothed-hill" => smoothed_hill(s, k, r),
        "trimmed-hill-opt" => trimmed_hill_optimal(s, k0, k),
        "mle" => mle_pareto(s, s.min()).map(|m| m.estimate(false)),
        "mle-unbiased" => mle_pareto(s, s.min()).map(|m| m.estimate(true)),
        "ls" => ls_estimator(s),
        "wls" => wls_estimator(s, s.min()),
        "pm" => pm_estimator(s),
        "pm-pair" => percentile_pair_estimator(s, a.p_lo.unwrap_or(0.1), a.p_hi.unwrap_or(0.9)),
        // The grid t_j = j/sqrt(n) assumes unit-scale data, so losses are
        // measured in multiples of the smallest one.
        "ecf" => OrderedSample::new(
            &s.ascending()
                .iter()
                .map(|x| x / s.min())
                .collect::<Vec<_>>(),
        )
        .and_then(|unit| {
            ecf_regression(
                &unit,
                &EcfRegressionConfig {
                    delta: a.delta.unwrap_or(0.45),
                },
            )
        })
        .map(|f| f.estimate()),
        "pareto-qq" => pareto_qq(s)
            .and_then(|pts| qq_fit(&pts))
            .map(|fit| TailIndexEstimate {
                method: Method::ParetoQq,
                alpha_hat: (fit.slope > 0.0).then(|| 1.0 / fit.slope),
                xi_hat: Some(fit.slope),
                scale: None,
                k: None,
                k0: None,
                std_error: Some(fit.slope_std_error),
                flags: Vec::new(),
            }),
        other => return Err(v(format!("unknown method '{other}'"))),
    };
    Ok(match est {
        Ok(e) => e,
        Err(
            cyrisk::Error::InvalidInput(_)
            | cyrisk::Error::Degenerate(_)
            | cyrisk::Error::Numerical(_),
        ) => {
            let method = match name {
                "hill" => Method::Hill,
                "smoothed-hill" => Method::SmoothedHill,
                "trimmed-hill-opt" => Method::TrimmedHillOptimal,
                "mle" => Method::Mle,
                "mle-unbiased" => Method::MleUnbiased,
                "ls" => Method::LeastSquares,
                "wls" => Method::WeightedLeastSquares,
                "pm" => Method::Percentile,
                "pm-pair" => Method::PercentilePair,
                "ecf" => Method::EcfRegression,
                _ => Method::ParetoQq,
            };
            failed(method, None, None)
        }
        Err(e) => return Err(e.into()),
    })
}

pub fn tailfit(a: &TailfitArgs, out: &Path) -> CmdResult {
    let mut methods: Vec<String> = match &a.methods {
        None => ALL_METHODS.iter().map(|s| s.to_string()).collect(),
        Some(m) if m.iter().any(|x| x == "all") => {
            ALL_METHODS.iter().map(|s| s.to_string()).collect()
        }
        Some(m) => m.clone(),
    };
    if a.experimental.unwrap_or(false) && !methods.iter().any(|m| m == "pm-pair") {
        methods.push("pm-pair".into());
    }
    for m in &methods {
        if !ALL_METHODS.contains(&m.as_str()) && m != "pm-pair" {
            return Err(v(format!("unknown method '{m}'")));
        }
    }
    if let Some(d) = a.delta {
        if !(d > 0.0 && d < 0.5) {
            return Err(v("--delta must lie in (0, 0.5)"));
        }
    }
    let p = load(&a.panel)?;
    let mut rows = Vec::new();
    let mut plot = csv::Writer::from_writer(Vec::new());
    let mut qq = csv::Writer::from_writer(Vec::new());
    let plots = a.plots.unwrap_or(false);
    let werr = |e: csv::Error| v(e.to_string());
    plot.write_record(["sector", "k", "xi", "ci_low", "ci_high"])
        .map_err(werr)?;
    qq.write_record(["sector", "theoretical", "empirical"])
        .map_err(werr)?;
    let mut failures = 0;
    for s in &p.sectors {
        let sample = OrderedSample::new(&p.panel.losses(s))?;
        for m in &methods {
            let e = run_method(m, &sample, a)?;
            if e.alpha_hat.is_none() {
                failures += 1;
            }
            rows.push((s.to_string(), e));
        }
        if plots {
            let n = sample.len();
            if n > 3 {
                for pt in hill_plot_data(&sample, 2, (n - 1).min(n / 2).max(3))? {
                    plot.write_record([
                        s.to_string(),
                        pt.k.to_string(),
                        format!("{:?}", pt.xi),
                        format!("{:?}", pt.ci_low),
                        format!("{:?}", pt.ci_high),
                    ])
                    .map_err(werr)?;
                }
            }
            for (t, e) in pareto_qq(&sample)? {
                qq.write_record([s.to_string(), format!("{t:?}"), format!("{e:?}")])
                    .map_err(werr)?;
            }
        }
    }
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("tailfit", a, &[&p.input])?);
    art.csv("tailfit.csv", csv_bytes(|b| write_estimates_csv(b, &rows))?);
    if plots {
        art.csv(
            "hill_plot.csv",
            plot.into_inner().map_err(|e| v(e.to_string()))?,
        );
        art.csv(
            "pareto_qq.csv",
            qq.into_inner().map_err(|e| v(e.to_string()))?,
        );
    }
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "rows": rows.len(),
        "undefined_estimates": failures,
        "outputs": art.write()?,
    }))
}

// ---------------------------------------------------------------- trim-sweep

fn utility_spec(a: &UtilityArgs, default_wealth: f64) -> Result<UtilitySpec, CliError> {
    let wealth = a.wealth.unwrap_or(default_wealth);
    let kind = match a.utility.as_deref().unwrap_or("log") {
        "log" => UtilityKind::Log,
        "linear" => UtilityKind::Linear,
        "exponential" => UtilityKind::Exponential {
            risk_aversion: a
                .risk_aversion
                .ok_or_else(|| v("exponential utility needs --risk-aversion"))?,
        },
        other => return Err(v(format!("unknown utility '{other}'"))),
    };
    let u = UtilitySpec { kind, wealth };
    u.validate()?;
    Ok(u)
}

fn cover_of(a: &UtilityArgs) -> Result<f64, CliError> {
    let c = a.cover.unwrap_or(0.1);
    if !(c > 0.0 && c <= 1.0) {
        return Err(v("--cover must lie in (0, 1]"));
    }
    Ok(c)
}

fn cap_mode_of(a: &UtilityArgs) -> Result<CapMode, CliError> {
    match a.cap_mode.as_deref().unwrap_or("per-event") {
        "per-event" => Ok(CapMode::PerEvent),
        "aggregate" => Ok(CapMode::Aggregate),
        other => Err(v(format!("unknown cap mode '{other}'"))),
    }
}

pub fn trim_sweep(a: &TrimSweepArgs, out: &Path) -> CmdResult {
    let k0s = a.k0.clone().unwrap_or_else(|| vec![0, 5, 10, 15, 20]);
    let ks = a.k.clone().unwrap_or_else(|| vec![50, 100, 150, 200]);
    if k0s.is_empty() || ks.is_empty() {
        return Err(v("k0 and k grids must be non-empty"));
    }
    let premium = a.premium.unwrap_or(false);
    let utility = utility_spec(&a.pricing, 1e9)?;
    let cover = cover_of(&a.pricing)?;
    let scenarios = a.scenarios.unwrap_or(100_000);
    if premium && scenarios == 0 {
        return Err(v("--scenarios must be positive"));
    }
    let p = load(&a.panel)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let werr = |e: csv::Error| v(e.to_string());
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
        "premium",
        "premium_std_error",
    ])
    .map_err(werr)?;
    let mut cells_total = 0;
    let mut feasible = 0;
    for (i, s) in p.sectors.iter().enumerate() {
        let sample = OrderedSample::new(&p.panel.losses(s))?;
        let cells = trimmed_hill_sweep(&sample, &k0s, &ks)?;
        let premiums = if premium {
            let q = p.panel.quarterly(s);
            let config = PremiumSweepConfig {
                rate: fit_poisson_rate(&q.counts)?,
                scenarios,
                seed: SeedStream::new(a.seed.unwrap_or(0))
                    .child(&format!("sweep-{i}"))
                    .master(),
                utility,
                cover,
                solver: SolverOptions::default(),
            };
            Some(trim_sweep_premiums(&sample, &cells, &config)?)
        } else {
            None
        };
        for (j, cell) in cells.iter().enumerate() {
            cells_total += 1;
            feasible += usize::from(cell.feasible());
            let e = cell.as_estimate();
            let quote = premiums.as_ref().and_then(|ps| ps[j].quote.clone());
            w.write_record([
                s.to_string(),
                e.method.to_string(),
                cell.k0.to_string(),
                cell.k.to_string(),
                fmt_opt(e.xi_hat),
                fmt_opt(e.alpha_hat),
                fmt_opt(e.scale),
                fmt_opt(e.std_error),
                e.flags
                    .iter()
                    .map(|f| f.name())
                    .collect::<Vec<_>>()
                    .join("|"),
                fmt_opt(quote.as_ref().map(|q| q.premium)),
                fmt_opt(quote.as_ref().map(|q| q.std_error)),
            ])
            .map_err(werr)?;
        }
    }
    let mut art = Artifacts::new(
        out.to_path_buf(),
        settings_hash("trim-sweep", a, &[&p.input])?,
    );
    art.csv(
        "trim_sweep.csv",
        w.into_inner().map_err(|e| v(e.to_string()))?,
    );
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "cells": cells_total,
        "feasible": feasible,
        "outputs": art.write()?,
    }))
}

// ---------------------------------------------------------------- extremogram

pub fn extremogram(a: &ExtremogramArgs, out: &Path) -> CmdResult {
    let variant: Variant = a.variant.as_deref().unwrap_or("ratio").parse()?;
    let levels = a.levels.clone().unwrap_or_else(default_levels);
    let use_counts = match a.series.as_deref().unwrap_or("aggregate") {
        "aggregate" => false,
        "count" => true,
        other => return Err(v(format!("unknown series '{other}'"))),
    };
    let p = load(&a.panel)?;
    let mut art = Artifacts::new(
        out.to_path_buf(),
        settings_hash("extremogram", a, &[&p.input])?,
    );
    let mut shapes = Vec::new();
    for s in &p.sectors {
        let q = p.panel.quarterly(s);
        let series: Vec<f64> = if use_counts {
            q.counts.iter().map(|&c| c as f64).collect()
        } else {
            q.aggregates.clone()
        };
        let max_lag = a
            .max_lag
            .unwrap_or(DEFAULT_MAX_LAG.min(series.len().saturating_sub(1)));
        let m = extremogram_matrix(&series, &levels, max_lag, variant)?;
        shapes.push(json!({"sector": s.to_string(), "levels": m.levels.len(), "lags": m.max_lag, "empty_cells": m.empty_cells()}));
        art.csv(
            format!("extremogram_{s}.csv"),
            csv_bytes(|b| m.write_csv(b))?,
        );
    }
    let hash = art.hash().to_string();
    Ok(json!({"settings_hash": hash, "matrices": shapes, "outputs": art.write()?}))
}

// ---------------------------------------------------------------- corr

fn dependence_config(r: &RobustArgs, seed: u64) -> Result<DependenceConfig, CliError> {
    let robust = RobustConfig {
        trim_fraction: r.trim.unwrap_or(0.1),
        huber_k: r.huber.unwrap_or(1.345),
        psi: match r.psi.as_deref().unwrap_or("huber") {
            "huber" => PsiKind::Huber,
            "identity" => PsiKind::Identity,
            other => return Err(v(format!("unknown psi '{other}'"))),
        },
        standardize: r.standardize.unwrap_or(true),
    };
    robust.validate()?;
    Ok(DependenceConfig {
        robust,
        quadrant_drop_zeros: r.drop_zeros.unwrap_or(false),
        mcd: McdConfig {
            h: None,
            search_budget: r.mcd_budget.unwrap_or(1_000_000),
            starts: r.mcd_starts.unwrap_or(500),
            steps: r.mcd_steps.unwrap_or(20),
            consistency: ConsistencyFactor::One,
            seed,
        },
    })
}

const ALL_CORR: [CorrelationMethod; 4] = [
    CorrelationMethod::Pearson,
    CorrelationMethod::SsdMedian,
    CorrelationMethod::Quadrant,
    CorrelationMethod::Mcd,
];

pub fn corr(a: &CorrArgs, out: &Path) -> CmdResult {
    let methods: Vec<CorrelationMethod> = match &a.methods {
        None => ALL_CORR.to_vec(),
        Some(m) if m.iter().any(|x| x == "all") => ALL_CORR.to_vec(),
        Some(m) => m.iter().map(|x| x.parse()).collect::<cyrisk::Result<_>>()?,
    };
    let config = dependence_config(
        &a.robust,
        SeedStream::new(a.seed.unwrap_or(0)).child("mcd").master(),
    )?;
    let floor = a.robust.eigen_floor.unwrap_or(DEFAULT_EIGEN_FLOOR);
    let repair = a.repair.unwrap_or(true);
    let p = load(&a.panel)?;
    if p.sectors.len() < 2 {
        return Err(v("correlation needs at least two sectors"));
    }
    let labels = p.labels();
    let data = p.quarterly_aggregates();
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("corr", a, &[&p.input])?);
    let mut body = Vec::new();
    let mut report = Vec::new();
    for (i, m) in methods.iter().enumerate() {
        let raw = correlation_matrix(&data, &labels, *m, &config)?;
        let (mat, changed) = if repair {
            let r = nearest_psd(&raw, floor)?;
            (r.matrix, r.changed)
        } else {
            (raw, false)
        };
        let mut chunk = csv_bytes(|b| write_correlation_csv(b, &labels, &mat, m.name()))?;
        if i > 0 {
            // Drop the repeated header line.
            let cut = chunk.iter().position(|&c| c == b'\n').map_or(0, |p| p + 1);
            chunk.drain(..cut);
        }
        body.extend(chunk);
        report.push(json!({"method": m.name(), "repaired": changed}));
    }
    art.csv("corr.csv", body);
    let hash = art.hash().to_string();
    Ok(json!({"settings_hash": hash, "matrices": report, "outputs": art.write()?}))
}

// ---------------------------------------------------------------- copula

fn families_of(list: &Option<Vec<String>>) -> Result<Vec<PairFamily>, CliError> {
    match list {
        None => Ok(PairFamily::DEFAULT_CANDIDATES.to_vec()),
        Some(l) => Ok(l.iter().map(|f| f.parse()).collect::<cyrisk::Result<_>>()?),
    }
}

pub fn copula(a: &CopulaArgs, out: &Path) -> CmdResult {
    let families = families_of(&a.families)?;
    let opts = FitOptions {
        theta_max: a.theta_max.unwrap_or(50.0),
        ..FitOptions::default()
    };
    let p = load(&a.panel)?;
    if p.sectors.len() < 3 {
        return Err(v("structure search needs at least three sectors"));
    }
    let pobs = pseudo_observations(&p.quarterly_aggregates())?;
    let ranked = select_structure(&pobs, &families, &opts)?;
    let labels = p.labels();
    let mut art = Artifacts::new(out.to_path_buf(), settings_hash("copula", a, &[&p.input])?);
    art.csv(
        "copula_structures.csv",
        csv_bytes(|b| write_structure_report(b, &ranked, &labels))?,
    );
    let top = &ranked[0];
    let top_pairs: Vec<Value> = top
        .structure
        .pairs
        .iter()
        .zip(&top.pair_fits)
        .map(|(&(x, y), f)| {
            json!({"pair": [labels[x], labels[y]], "family": f.family().name(), "parameter": f.copula.parameter(), "tau": f.tau})
        })
        .collect();
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "structures": ranked.len(),
        "top": {"score": top.score, "pairs": top_pairs, "singleton": top.structure.singleton.map(|s| labels[s].clone())},
        "outputs": art.write()?,
    }))
}

// ---------------------------------------------------------------- price / diversify

struct Model {
    tables: Vec<AggregateTable>,
    copula: CopulaSpec,
    scenarios: usize,
    periods: usize,
    coupling_seed: u64,
    bootstrap_seed: u64,
    dump: bool,
}

struct ModelPlan {
    severity: String,
    marginal: usize,
    scenarios: usize,
    periods: usize,
    copula: String,
    corr_method: CorrelationMethod,
    config: DependenceConfig,
    seeds: SeedStream,
    dump: bool,
    k: Option<usize>,
    k0: usize,
}

fn plan_model(m: &ModelArgs) -> Result<ModelPlan, CliError> {
    let seeds = SeedStream::new(m.seed.unwrap_or(0));
    let severity = m.severity.clone().unwrap_or_else(|| "empirical".into());
    if !matches!(severity.as_str(), "empirical" | "pareto") {
        return Err(v(format!("unknown severity '{severity}'")));
    }
    let copula = m.copula.clone().unwrap_or_else(|| "independence".into());
    if !matches!(copula.as_str(), "independence" | "gaussian" | "structure") {
        return Err(v(format!("unknown copula '{copula}'")));
    }
    let marginal = m.marginal_scenarios.unwrap_or(100_000);
    let scenarios = m.scenarios.unwrap_or(1_000_000);
    let periods = m.periods.unwrap_or(1);
    if marginal == 0 || scenarios == 0 || periods == 0 {
        return Err(v("scenario counts and periods must be positive"));
    }
    Ok(ModelPlan {
        severity,
        marginal,
        scenarios,
        periods,
        copula,
        corr_method: m.corr_method.as_deref().unwrap_or("pearson").parse()?,
        config: dependence_config(&m.robust, seeds.child("mcd").master())?,
        seeds,
        dump: m.dump.unwrap_or(false),
        k: m.k,
        k0: m.k0.unwrap_or(0),
    })
}

fn build_model(p: &Panel, plan: &ModelPlan) -> Result<Model, CliError> {
    let labels = p.labels();
    let lines = p
        .sectors
        .iter()
        .map(|s| {
            let losses = p.panel.losses(s);
            let rate = fit_poisson_rate(&p.panel.quarterly(s).counts)?;
            let severity = if plan.severity == "pareto" {
                let sample = OrderedSample::new(&losses)?;
                let k = plan.k.unwrap_or_else(|| default_k(sample.len()));
                let e = trimmed_hill_optimal(&sample, plan.k0, k)?;
                let alpha = e.alpha_hat.ok_or_else(|| {
                    CliError::Computation(format!("sector {s}: degenerate tail estimate"))
                })?;
                Severity::Pareto {
                    alpha,
                    x_min: sample.min(),
                }
            } else {
                empirical_severity(&losses)
            };
            Ok(LineModel {
                label: s.to_string(),
                rate,
                severity,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let d = lines.len();
    let copula = match plan.copula.as_str() {
        "independence" => CopulaSpec::Independence { dim: d },
        "gaussian" => {
            if d < 2 {
                return Err(v("gaussian coupling needs at least two sectors"));
            }
            let raw = correlation_matrix(
                &p.quarterly_aggregates(),
                &labels,
                plan.corr_method,
                &plan.config,
            )?;
            CopulaSpec::Gaussian {
                corr: nearest_psd(&raw, DEFAULT_EIGEN_FLOOR)?.matrix,
            }
        }
        _ => {
            if d < 3 {
                return Err(v("structure coupling needs at least three sectors"));
            }
            let pobs = pseudo_observations(&p.quarterly_aggregates())?;
            let ranked = select_structure(
                &pobs,
                &PairFamily::DEFAULT_CANDIDATES,
                &FitOptions::default(),
            )?;
            ranked[0].spec(d)
        }
    };
    let tables = simulate_all(
        &CompoundModel { lines },
        plan.marginal,
        plan.seeds.child("marginal").master(),
    )?;
    Ok(Model {
        tables,
        copula,
        scenarios: plan.scenarios,
        periods: plan.periods,
        coupling_seed: plan.seeds.child("coupling").master(),
        bootstrap_seed: plan.seeds.child("bootstrap").master(),
        dump: plan.dump,
    })
}

fn weights_of(w: &Option<Vec<f64>>, d: usize) -> Result<Vec<f64>, CliError> {
    let w = w.clone().unwrap_or_else(|| vec![1.0 / d as f64; d]);
    if w.len() != d {
        return Err(v(format!("{} weights given for {d} sectors", w.len())));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(v("weights must be non-negative and sum to one"));
    }
    Ok(w)
}

fn ci_level_of(x: Option<f64>) -> Result<f64, CliError> {
    let l = x.unwrap_or(0.95);
    check_unit("--ci-level", l)?;
    Ok(l)
}

fn check_bootstrap(b: usize) -> Result<(), CliError> {
    if b != 0 && b < 100 {
        return Err(v(
            "--bootstrap needs at least 100 replicates (or 0 to disable)",
        ));
    }
    Ok(())
}

pub fn price(a: &PriceArgs, out: &Path) -> CmdResult {
    let portfolio = a.portfolio.unwrap_or(false);
    if portfolio == a.line.is_some() {
        return Err(v("choose exactly one of --portfolio or --line"));
    }
    if let Some(u) = a.conditional {
        if a.line.is_none() {
            return Err(v("--conditional needs --line"));
        }
        if !(0.0..1.0).contains(&u) {
            return Err(v("--conditional must lie in [0, 1)"));
        }
    }
    let plan = plan_model(&a.model)?;
    let utility = utility_spec(&a.pricing, if portfolio { 1e10 } else { 1e9 })?;
    let cover = cover_of(&a.pricing)?;
    let cap_mode = cap_mode_of(&a.pricing)?;
    let bootstrap = a.bootstrap.unwrap_or(0);
    check_bootstrap(bootstrap)?;
    let ci_level = ci_level_of(a.ci_level)?;
    let p = load(&a.panel)?;
    let d = p.sectors.len();
    let weights = weights_of(&a.weights, d)?;
    let target = match &a.line {
        Some(l) => Some(
            p.sectors
                .iter()
                .position(|s| s.as_str() == l)
                .ok_or_else(|| v(format!("sector {l} is not in the panel")))?,
        ),
        None => None,
    };
    let hash = settings_hash("price", a, &[&p.input])?;

    let model = build_model(&p, &plan)?;
    let joint = couple_periods(
        &model.tables,
        &model.copula,
        model.scenarios,
        model.periods,
        model.coupling_seed,
    )?;
    let terms = PolicyTerms {
        cover,
        weights,
        cap_mode,
    };
    let mode = target.map_or(PremiumMode::Portfolio, PremiumMode::Line);
    let solver = SolverOptions::default();
    let losses = scenario_losses(&joint, &utility, &terms, mode)?;
    let quote = solve_premium(&losses, &utility, &solver)?;
    let ci = if bootstrap > 0 {
        Some(bootstrap_ci(
            losses.len(),
            bootstrap,
            ci_level,
            model.bootstrap_seed,
            |idx| solve_premium(&losses.select(idx), &utility, &solver).map(|q| q.premium),
        )?)
    } else {
        None
    };
    let target_label = target.map_or_else(|| "portfolio".to_string(), |i| p.sectors[i].to_string());
    let mut rows = vec![PricingRow {
        mode: if portfolio {
            "portfolio".into()
        } else {
            "line".into()
        },
        target: target_label.clone(),
        value: quote.premium,
        std_error: Some(quote.std_error),
        ci_low: ci.as_ref().map(|c| c.low),
        ci_high: ci.as_ref().map(|c| c.high),
    }];
    let mut conditional = Value::Null;
    if let (Some(level), Some(i)) = (a.conditional, target) {
        let q = cyrisk::pricing::conditional_premium(&joint, i, level, &utility, &terms, &solver)?;
        rows.push(PricingRow {
            mode: format!("conditional@{level}"),
            target: target_label.clone(),
            value: q.premium,
            std_error: Some(q.std_error),
            ci_low: None,
            ci_high: None,
        });
        conditional = json!({"level": level, "premium": q.premium, "std_error": q.std_error, "scenarios": q.scenarios});
    }
    let mut art = Artifacts::new(out.to_path_buf(), hash.clone());
    art.csv(
        "price.csv",
        csv_bytes(|b| write_pricing_csv(b, &rows, &hash))?,
    );
    if model.dump {
        let mut buf = Vec::new();
        joint.write_dump(&mut buf)?;
        art.raw("scenarios.bin", buf);
    }
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "mode": rows[0].mode,
        "target": target_label,
        "premium": quote.premium,
        "std_error": quote.std_error,
        "ci": ci.map(|c| json!([c.low, c.high])),
        "iterations": quote.iterations,
        "scenarios": quote.scenarios,
        "copula": model.copula.name(),
        "wealth": utility.wealth,
        "conditional": conditional,
        "outputs": art.write()?,
    }))
}

pub fn diversify(a: &DiversifyArgs, out: &Path) -> CmdResult {
    let plan = plan_model(&a.model)?;
    let level = a.level.unwrap_or(0.99);
    check_unit("--level", level)?;
    let bootstrap = a.bootstrap.unwrap_or(0);
    check_bootstrap(bootstrap)?;
    let ci_level = ci_level_of(a.ci_level)?;
    let p = load(&a.panel)?;
    let weights = weights_of(&a.weights, p.sectors.len())?;
    let hash = settings_hash("diversify", a, &[&p.input])?;

    let model = build_model(&p, &plan)?;
    let joint = couple_periods(
        &model.tables,
        &model.copula,
        model.scenarios,
        model.periods,
        model.coupling_seed,
    )?;
    let aggregates: Vec<Vec<f64>> = (0..joint.line_count())
        .map(|i| joint.line_aggregates(i))
        .collect();
    let mut result = diversification_from_aggregates(&aggregates, &weights, level)?;
    if bootstrap > 0 {
        let ci = bootstrap_ci(
            joint.scenario_count(),
            bootstrap,
            ci_level,
            model.bootstrap_seed,
            |idx| {
                let resampled: Vec<Vec<f64>> = aggregates
                    .iter()
                    .map(|a| idx.iter().map(|&s| a[s]).collect())
                    .collect();
                diversification_from_aggregates(&resampled, &weights, level).map(|r| r.ratio)
            },
        )?;
        result.ci = Some((ci.low, ci.high));
    }
    let labels = p.labels();
    let mut rows = vec![PricingRow {
        mode: "diversification".into(),
        target: "portfolio".into(),
        value: result.ratio,
        std_error: None,
        ci_low: result.ci.map(|c| c.0),
        ci_high: result.ci.map(|c| c.1),
    }];
    rows.push(PricingRow {
        mode: format!("var@{level}"),
        target: "portfolio".into(),
        value: result.portfolio_var,
        std_error: None,
        ci_low: None,
        ci_high: None,
    });
    for (l, var) in labels.iter().zip(&result.line_vars) {
        rows.push(PricingRow {
            mode: format!("var@{level}"),
            target: l.clone(),
            value: *var,
            std_error: None,
            ci_low: None,
            ci_high: None,
        });
    }
    let mut art = Artifacts::new(out.to_path_buf(), hash.clone());
    art.csv(
        "diversify.csv",
        csv_bytes(|b| write_pricing_csv(b, &rows, &hash))?,
    );
    if model.dump {
        let mut buf = Vec::new();
        joint.write_dump(&mut buf)?;
        art.raw("scenarios.bin", buf);
    }
    let hash = art.hash().to_string();
    Ok(json!({
        "settings_hash": hash,
        "ratio": result.ratio,
        "level": level,
        "portfolio_var": result.portfolio_var,
        "line_vars": result.line_vars,
        "ci": result.ci.map(|c| json!([c.0, c.1])),
        "copula": model.copula.name(),
        "outputs": art.write()?,
    }))
}
