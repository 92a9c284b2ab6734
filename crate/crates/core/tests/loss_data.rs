mod common;

use chrono::NaiveDate;
use cyrisk::compound::Severity;
use cyrisk::loss_data::*;
use proptest::prelude::*;

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn sector(c: &str) -> SectorCode {
    SectorCode::new(c).unwrap()
}

fn event(id: &str, date: NaiveDate, loss: f64) -> LossEvent {
    LossEvent {
        event_id: id.into(),
        accident_date: date,
        sector: sector("52"),
        total_loss: loss,
    }
}

fn parse(text: &str) -> ParseOutcome {
    parse_loss_records(text.as_bytes(), &SchemaConfig::default()).unwrap()
}

fn pareto_line(alpha: f64, rate: f64) -> SyntheticLine {
    SyntheticLine {
        sector: sector("52"),
        rate,
        severity: Severity::Pareto { alpha, x_min: 1.0 },
        contamination: Vec::new(),
    }
}

fn spec(lines: Vec<SyntheticLine>, quarters: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        lines,
        coupling: None,
        start: Quarter::new(2000, 1).unwrap(),
        quarters,
        seed,
    }
}

#[test]
fn zero_and_negative_losses_are_dropped() {
    let out = parse("event_id,accident_date,sector,total_loss\na,2001-01-01,52,0\n");
    assert!(out.events.is_empty());
    assert_eq!(out.dropped, 1);

    let out = parse(
        "event_id,accident_date,sector,total_loss\n\
         a,2001-01-01,52,10\nb,2001-02-01,52,20\nc,2001-03-01,51,30\nd,2001-04-01,52,-5\n",
    );
    assert_eq!(out.events.len(), 3);
    assert_eq!(out.dropped, 1);
}

#[test]
fn header_only_input() {
    let out = parse("event_id,accident_date,sector,total_loss\n");
    assert!(out.events.is_empty());
    assert_eq!(out.dropped, 0);
}

#[test]
fn missing_column_is_fatal() {
    let r = parse_loss_records(
        "event_id,accident_date,total_loss\n".as_bytes(),
        &SchemaConfig::default(),
    );
    assert!(r.is_err());
}

#[test]
fn window_excludes_day_before_start() {
    let events = vec![
        event("a", d(1989, 12, 31), 5.0),
        event("b", d(1990, 1, 1), 7.0),
    ];
    let kept = filter_window(&events, d(1990, 1, 1), d(2020, 12, 31)).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].event_id, "b");

    let all = filter_window(&events, d(1980, 1, 1), d(2020, 12, 31)).unwrap();
    assert_eq!(all, events);
    assert!(filter_window(&[], d(1990, 1, 1), d(1991, 1, 1))
        .unwrap()
        .is_empty());
    assert!(filter_window(&events, d(1991, 1, 1), d(1990, 1, 1)).is_err());
}

#[test]
fn quarterly_aggregation_fixtures() {
    let w = Window::new(d(1995, 1, 1), d(1995, 12, 31)).unwrap();
    let q = aggregate_quarterly(sector("52"), &[event("a", d(1995, 5, 10), 100.0)], w);
    assert_eq!(q.aggregates, vec![0.0, 100.0, 0.0, 0.0]);
    assert_eq!(q.counts, vec![0, 1, 0, 0]);

    let q = aggregate_quarterly(
        sector("52"),
        &[
            event("a", d(1995, 5, 10), 100.0),
            event("b", d(1995, 6, 30), 50.0),
        ],
        w,
    );
    assert_eq!(q.aggregates[1], 150.0);
    assert_eq!(q.counts[1], 2);

    let empty = aggregate_quarterly(sector("52"), &[], w);
    assert!(empty.aggregates.iter().all(|&a| a == 0.0));
}

#[test]
fn poisson_rate_fixtures() {
    assert_eq!(fit_poisson_rate(&[0, 0, 0]).unwrap(), 0.0);
    assert_eq!(fit_poisson_rate(&[1, 2, 3]).unwrap(), 2.0);
    assert!(fit_poisson_rate(&[]).is_err());
}

#[test]
fn poisson_rate_recovers_simulated_rate() {
    let panel = generate_synthetic_panel(&spec(vec![pareto_line(1.0, 4.0)], 10_000, 3)).unwrap();
    let q = panel.quarterly(&sector("52"));
    let rate = fit_poisson_rate(&q.counts).unwrap();
    assert!((rate - 4.0).abs() < 0.1, "rate {rate}");
}

#[test]
fn synthetic_panels_are_deterministic() {
    let s = spec(vec![pareto_line(1.2, 3.0)], 40, 11);
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_loss_records(&mut a, &generate_synthetic_panel(&s).unwrap().all_events()).unwrap();
    write_loss_records(&mut b, &generate_synthetic_panel(&s).unwrap().all_events()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synthetic_pareto_median() {
    // Median of Pareto(1, 1) is 2.
    let panel = generate_synthetic_panel(&spec(vec![pareto_line(1.0, 10.0)], 10_000, 5)).unwrap();
    let losses = panel.losses(&sector("52"));
    assert!(losses.len() > 90_000);
    let m = common::median_of(losses);
    assert!((m - 2.0).abs() < 0.05, "median {m}");
}

#[test]
fn synthetic_severities_pass_ks() {
    // Critical value of the one-sample KS test at the 1% level.
    let mut passes = 0;
    for seed in 0..100 {
        let panel =
            generate_synthetic_panel(&spec(vec![pareto_line(1.5, 10.0)], 1_000, seed)).unwrap();
        let losses = panel.losses(&sector("52"));
        let crit = 1.628 / (losses.len() as f64).sqrt();
        let ks = common::ks_statistic(&losses, |x| 1.0 - x.powf(-1.5));
        passes += usize::from(ks < crit);
    }
    assert!(passes >= 95, "{passes} of 100 passed");
}

#[test]
fn contamination_hits_largest_losses() {
    let mut s = spec(vec![pareto_line(1.0, 5.0)], 50, 2);
    let clean = generate_synthetic_panel(&s).unwrap().losses(&sector("52"));
    s.lines[0].contamination = vec![Contamination {
        count: 3,
        multiplier: 1000.0,
    }];
    let dirty = generate_synthetic_panel(&s).unwrap().losses(&sector("52"));
    let mut c = clean.clone();
    c.sort_by(|a, b| b.total_cmp(a));
    let mut changed: Vec<(f64, f64)> = clean
        .iter()
        .zip(&dirty)
        .filter(|(a, b)| a != b)
        .map(|(&a, &b)| (a, b))
        .collect();
    changed.sort_by(|a, b| b.0.total_cmp(&a.0));
    assert_eq!(changed.len(), 3);
    for (i, (a, b)) in changed.iter().enumerate() {
        assert_eq!(*a, c[i]);
        assert_eq!(*b, a * 1000.0);
    }
}

#[test]
fn invalid_specs_rejected() {
    assert!(generate_synthetic_panel(&spec(vec![pareto_line(-1.0, 1.0)], 10, 0)).is_err());
    assert!(generate_synthetic_panel(&spec(vec![pareto_line(1.0, -1.0)], 10, 0)).is_err());
    let mut s = spec(vec![pareto_line(1.0, 1.0)], 10, 0);
    s.lines[0].contamination = vec![Contamination {
        count: 1_000,
        multiplier: 10.0,
    }];
    assert!(generate_synthetic_panel(&s).is_err());
}

proptest! {
    #[test]
    fn aggregation_conserves_total(losses in prop::collection::vec(1e-3f64..1e9, 1..300), days in prop::collection::vec(0i64..3650, 300)) {
        let start = d(2000, 1, 1);
        let events: Vec<LossEvent> = losses
            .iter()
            .zip(&days)
            .enumerate()
            .map(|(i, (&l, &dd))| event(&i.to_string(), start + chrono::Duration::days(dd), l))
            .collect();
        let w = Window::new(start, d(2009, 12, 31)).unwrap();
        let q = aggregate_quarterly(sector("52"), &events, w);
        let total = cyrisk::numeric::exact_sum(losses.iter().copied());
        let series = cyrisk::numeric::exact_sum(q.aggregates.iter().copied());
        // Quarter sums are correctly rounded, so the checksum agrees to rounding.
        prop_assert!((series - total).abs() <= 1e-12 * total);
        prop_assert_eq!(q.counts.iter().sum::<u64>() as usize, events.len());
    }

    #[test]
    fn records_round_trip(losses in prop::collection::vec(1e-3f64..1e12, 0..50)) {
        let events: Vec<LossEvent> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| event(&format!("e{i}"), d(2005, 1, 1) + chrono::Duration::days(i as i64), l))
            .collect();
        let mut buf = Vec::new();
        write_loss_records(&mut buf, &events).unwrap();
        let back = parse_loss_records(buf.as_slice(), &SchemaConfig::default()).unwrap();
        prop_assert_eq!(back.dropped, 0);
        let mut again = Vec::new();
        write_loss_records(&mut again, &back.events).unwrap();
        prop_assert_eq!(&back.events, &events);
        prop_assert_eq!(again, buf);
    }
}
