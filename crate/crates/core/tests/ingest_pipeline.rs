use std::fmt::Write as _;

use velander_core::ingest::{
    clean_profiles, parse_meter_reader, read_records_csv, write_profiles_csv, write_records_csv, year_start,
};
use velander_core::{compute_features, Interval, LoadProfile};

fn meter_csv(rows: &[(&str, Vec<Option<f64>>)]) -> String {
    let mut out = String::from("customer_id,timestamp,load_kw\n");
    for (id, values) in rows {
        for (t, v) in values.iter().enumerate() {
            let ts = format!("2022-01-01T{:02}:{:02}:00", t / 4, 15 * (t % 4));
            match v {
                Some(v) => writeln!(out, "{id},{ts},{v}").unwrap(),
                None => writeln!(out, "{id},{ts},").unwrap(),
            }
        }
    }
    out
}

#[test]
fn parse_clean_and_reduce() {
    let good: Vec<Option<f64>> = (0..8).map(|t| Some(0.5 + t as f64 * 0.25)).collect();
    let mut gap = good.clone();
    gap[3] = None;
    let mut negative = good.clone();
    negative[5] = Some(-0.1);
    let zeros = vec![Some(0.0); 8];
    let text = meter_csv(&[
        ("b", good.clone()),
        ("a", good.clone()),
        ("gap", gap),
        ("neg", negative),
        ("zero", zeros),
    ]);

    let profiles = parse_meter_reader(text.as_bytes(), Interval::QUARTER_HOUR).unwrap();
    assert_eq!(profiles.len(), 5);
    let (kept, report) = clean_profiles(profiles, 8);
    assert_eq!(
        (
            report.original,
            report.incomplete,
            report.negative,
            report.zero_first_week,
            report.retained
        ),
        (5, 1, 1, 1, 2)
    );
    assert_eq!(report.removed() + report.retained, report.original);
    let ids: Vec<&str> = kept.iter().map(|p| p.customer_id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);

    let records: Vec<_> = kept.iter().map(|p| compute_features(p).unwrap()).collect();
    assert_eq!(records[0].peak, 2.25);
    assert_eq!(records[0].energy, 0.5 * 8.0 + 0.25 * 28.0);

    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf).unwrap();
    assert_eq!(read_records_csv(buf.as_slice()).unwrap(), records);
}

#[test]
fn written_profiles_parse_back() {
    let profiles = vec![
        LoadProfile::new("x", vec![1.0, 0.1 + 0.2, 3.0, 1e-7], Interval::QUARTER_HOUR).unwrap(),
        LoadProfile::new("y", vec![0.0, 2.0, 0.5, 4.0], Interval::QUARTER_HOUR).unwrap(),
    ];
    let mut buf = Vec::new();
    write_profiles_csv(&profiles, year_start(2023).unwrap(), &mut buf).unwrap();
    let back = parse_meter_reader(buf.as_slice(), Interval::QUARTER_HOUR).unwrap();
    assert_eq!(back, profiles);
}
