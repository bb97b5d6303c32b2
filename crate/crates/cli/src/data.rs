//! Loading meter data and ingested record sets.

use std::path::PathBuf;

use anyhow::Context;
use velander_core::ingest::{
    clean_profiles, expected_intervals, leap_year_adjust, parse_meter_csv, read_records_file, CleaningReport,
    RawMeterFile,
};
use velander_core::{compute_features, CustomerRecord, LoadProfile};

use crate::config::{InputSpec, Resolved};
use crate::output::require_file;

pub struct Dataset {
    pub spec: InputSpec,
    /// Cleaned profiles.
    pub profiles: Vec<LoadProfile>,
    /// Records of `profiles`, leap-year adjusted when configured.
    pub records: Vec<CustomerRecord>,
    pub report: CleaningReport,
}

impl Dataset {
    pub fn key(&self) -> String {
        self.spec.key()
    }
}

pub fn load_dataset(run: &Resolved, spec: &InputSpec) -> anyhow::Result<Dataset> {
    let path = run.input_path(spec);
    require_file(&path)?;
    let interval = run.config.interval()?;
    let raw = RawMeterFile {
        path: path.clone(),
        year: spec.year,
        segment: spec.segment.clone(),
    };
    let profiles = parse_meter_csv(&raw, interval).with_context(|| format!("reading {}", path.display()))?;
    let expected = match run.config.data.expected_t {
        Some(t) => t,
        None => expected_intervals(spec.year, interval)?,
    };
    let (profiles, report) = clean_profiles(profiles, expected);
    log::info!(
        "{}: {} customers, {} retained after cleaning",
        spec.key(),
        report.original,
        report.retained
    );
    let mut records = profiles.iter().map(compute_features).collect::<Result<Vec<_>, _>>()?;
    if run.config.data.leap_year_adjust {
        records = leap_year_adjust(records, spec.year);
    }
    Ok(Dataset {
        spec: spec.clone(),
        profiles,
        records,
        report,
    })
}

pub fn load_all(run: &Resolved) -> anyhow::Result<Vec<Dataset>> {
    if run.config.data.inputs.is_empty() {
        anyhow::bail!("no inputs configured (add [[data.inputs]] entries)");
    }
    run.config.data.inputs.iter().map(|s| load_dataset(run, s)).collect()
}

/// Location of the cleaned records written by `ingest`.
pub fn ingested_records_path(run: &Resolved, spec: &InputSpec) -> PathBuf {
    run.out_dir.join("ingest").join(spec.key()).join("records.csv")
}

pub fn load_ingested(run: &Resolved, spec: &InputSpec) -> anyhow::Result<Vec<CustomerRecord>> {
    let path = ingested_records_path(run, spec);
    require_file(&path).context("run `velander ingest` first")?;
    read_records_file(&path).with_context(|| format!("reading {}", path.display()))
}
