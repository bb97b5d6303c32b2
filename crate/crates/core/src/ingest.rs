//! Smart-meter CSV ingestion, cleaning and record datasets.
//!
//! Input schema: header `customer_id,timestamp,load_kw`, UTF-8, `.` decimal
//! separator. Timestamps are ISO-8601, either naive (taken as fixed local
//! time) or with an offset (converted to UTC). An empty `load_kw` field, or
//! `NaN`/`NA`, is a missing-reading marker.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CustomerRecord, Interval, LoadProfile};

/// Number of leading intervals that must not be all zero (one week at 15 minutes).
pub const FIRST_WEEK_INTERVALS: usize = 672;

pub const METER_HEADER: [&str; 3] = ["customer_id", "timestamp", "load_kw"];
pub const RECORD_HEADER: [&str; 4] = ["customer_id", "energy", "peak", "weight_level"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// A meter file on disk together with the period and segment it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMeterFile {
    pub path: PathBuf,
    pub year: i32,
    pub segment: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub original: usize,
    pub incomplete: usize,
    pub negative: usize,
    pub zero_first_week: usize,
    pub retained: usize,
}

impl CleaningReport {
    pub fn removed(&self) -> usize {
        self.incomplete + self.negative + self.zero_first_week
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn is_leap_year(year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, 2, 29).is_some()
}

pub fn days_in_year(year: i32) -> usize {
    if is_leap_year(year) {
        366
    } else {
        365
    }
}

/// Intervals in a calendar year at the given resolution.
pub fn expected_intervals(year: i32, interval: Interval) -> Result<usize> {
    let per_day = interval
        .per_day()
        .ok_or_else(|| Error::InvalidInput(format!("{} minutes does not divide a day", interval.minutes())))?;
    Ok(days_in_year(year) * per_day)
}

pub fn parse_meter_csv(file: &RawMeterFile, interval: Interval) -> Result<Vec<LoadProfile>> {
    let reader = File::open(&file.path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", file.path.display()))))?;
    let profiles = parse_meter_reader(reader, interval)?;
    if let Some(p) = profiles.first() {
        log::debug!(
            "{}: {} customers, first profile {} intervals",
            file.path.display(),
            profiles.len(),
            p.len()
        );
    }
    Ok(profiles)
}

/// Parses meter readings into one profile per customer, sorted by customer id.
///
/// Each profile starts at that customer's earliest timestamp. Gaps in the
/// series are filled with missing markers so that the profile length counts
/// every interval between its first and last reading.
pub fn parse_meter_reader<R: Read>(reader: R, interval: Interval) -> Result<Vec<LoadProfile>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => {
            log::warn!("meter file is empty");
            return Ok(Vec::new());
        }
        Some(h) => h?,
    };
    let fields: Vec<&str> = header.iter().collect();
    if fields != METER_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                METER_HEADER.join(","),
                fields.join(",")
            ),
        });
    }

    let mut readings: BTreeMap<String, BTreeMap<NaiveDateTime, f64>> = BTreeMap::new();
    for result in records {
        let row = result?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 3 {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let customer = &row[0];
        if customer.is_empty() {
            return Err(Error::MalformedRow {
                row: line,
                message: "empty customer_id".into(),
            });
        }
        let timestamp = parse_timestamp(&row[1]).ok_or_else(|| Error::MalformedRow {
            row: line,
            message: format!("unparseable timestamp '{}'", &row[1]),
        })?;
        let value = parse_load(&row[2]).ok_or_else(|| Error::MalformedRow {
            row: line,
            message: format!("load_kw '{}' is not a finite decimal", &row[2]),
        })?;
        match readings.entry(customer.to_string()).or_default().entry(timestamp) {
            Entry::Occupied(_) => {
                return Err(Error::DuplicateTimestamp {
                    customer: customer.to_string(),
                    timestamp: timestamp.format(TIMESTAMP_FORMAT).to_string(),
                })
            }
            Entry::Vacant(slot) => {
                slot.insert(value);
            }
        }
    }

    if readings.is_empty() {
        log::warn!("meter file has a header but no readings");
    }

    let step = TimeDelta::minutes(i64::from(interval.minutes()));
    let mut profiles = Vec::with_capacity(readings.len());
    for (customer, series) in readings {
        let start = *series.keys().next().expect("series is non-empty");
        let mut values = Vec::with_capacity(series.len());
        for (ts, value) in series {
            let offset = ts - start;
            if offset.num_seconds() % step.num_seconds() != 0 {
                return Err(Error::InvalidInput(format!(
                    "customer {customer}: timestamp {} is not aligned to the {}-minute grid",
                    ts.format(TIMESTAMP_FORMAT),
                    interval.minutes()
                )));
            }
            let index = (offset.num_seconds() / step.num_seconds()) as usize;
            values.resize(index, f64::NAN);
            values.push(value);
        }
        profiles.push(LoadProfile::with_missing(customer, values, interval));
    }
    Ok(profiles)
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
}

/// `Some(NaN)` for a missing marker, `None` for garbage.
fn parse_load(text: &str) -> Option<f64> {
    if text.is_empty() || text.eq_ignore_ascii_case("nan") || text.eq_ignore_ascii_case("na") {
        return Some(f64::NAN);
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Removal {
    Incomplete,
    Negative,
    ZeroFirstWeek,
}

fn removal_reason(profile: &LoadProfile, expected_t: usize) -> Option<Removal> {
    if profile.len() != expected_t || profile.has_missing() {
        return Some(Removal::Incomplete);
    }
    if profile.values.iter().any(|&v| v < 0.0) {
        return Some(Removal::Negative);
    }
    let head = FIRST_WEEK_INTERVALS.min(profile.len());
    if profile.values[..head].iter().all(|&v| v == 0.0) {
        return Some(Removal::ZeroFirstWeek);
    }
    None
}

/// Drops incomplete profiles, profiles with negative readings, and profiles
/// that are all zero over their first week. A profile failing several rules
/// is counted under the first one in that order. With `expected_t` below one
/// week the zero rule inspects every available interval.
pub fn clean_profiles(profiles: Vec<LoadProfile>, expected_t: usize) -> (Vec<LoadProfile>, CleaningReport) {
    let mut report = CleaningReport {
        original: profiles.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(profiles.len());
    for profile in profiles {
        match removal_reason(&profile, expected_t) {
            Some(Removal::Incomplete) => report.incomplete += 1,
            Some(Removal::Negative) => report.negative += 1,
            Some(Removal::ZeroFirstWeek) => report.zero_first_week += 1,
            None => kept.push(profile),
        }
    }
    report.retained = kept.len();
    (kept, report)
}

/// Rescales ECs of a leap year to a 365-day basis.
pub fn leap_year_adjust(records: Vec<CustomerRecord>, year: i32) -> Vec<CustomerRecord> {
    if !is_leap_year(year) {
        return records;
    }
    records
        .into_iter()
        .map(|mut r| {
            r.energy = r.energy * 365.0 / 366.0;
            r
        })
        .collect()
}

/// The `a`-th percentile of the ECs, linear interpolation between closest
/// ranks (`h = (n - 1) * a / 100`).
pub fn ec_percentile(records: &[CustomerRecord], a: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut energies: Vec<f64> = records.iter().map(|r| r.energy).collect();
    energies.sort_by(f64::total_cmp);
    percentile_sorted(&energies, a)
}

pub(crate) fn percentile_sorted(sorted: &[f64], a: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&a) {
        return Err(Error::InvalidInput(format!("percentile {a} outside [0, 100]")));
    }
    let h = (sorted.len() - 1) as f64 * a / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn write_records_csv<W: Write>(records: &[CustomerRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RECORD_HEADER)?;
    for r in records {
        wtr.write_record([
            r.customer_id.clone(),
            r.energy.to_string(),
            r.peak.to_string(),
            r.weight_level.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<CustomerRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header {}", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::MalformedRow {
            row: line,
            message: format!("bad {what}"),
        };
        let energy = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("energy"))?;
        let peak = row.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("peak"))?;
        let level = row
            .get(3)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("weight_level"))?;
        out.push(CustomerRecord::new(&row[0], energy, peak, level)?);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<CustomerRecord>> {
    read_records_csv(File::open(path)?)
}

/// Writes profiles in the meter schema, with timestamps counted from `start`.
pub fn write_profiles_csv<W: Write>(profiles: &[LoadProfile], start: NaiveDateTime, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(METER_HEADER)?;
    for p in profiles {
        let step = TimeDelta::minutes(i64::from(p.interval.minutes()));
        let mut ts = start;
        for v in &p.values {
            let value = if v.is_nan() { String::new() } else { v.to_string() };
            wtr.write_record([p.customer_id.as_str(), &ts.format(TIMESTAMP_FORMAT).to_string(), &value])?;
            ts += step;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Midnight on the first of January.
pub fn year_start(year: i32) -> Result<NaiveDateTime> {
    NaiveDate::from_ymd_opt(year, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .filter(|d| d.year() == year)
        .ok_or_else(|| Error::InvalidInput(format!("year {year} out of range")))
}
