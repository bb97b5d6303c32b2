use std::collections::{BTreeMap, BTreeSet};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use velander_core::evaluation::{
    aggregation_cv, band_restricted_fit, derive_seed, export_curves, kfold_cv, sld, synth_gaussian_profiles, tld,
    AggregationTable, BandFit, CurveExport, CvReport, GaussianPopulation, ProfiledPopulation, SldReport, TldReport,
    VelanderPopulation,
};
use velander_core::ingest::{ec_percentile, write_profiles_csv, write_records_csv, year_start, RECORD_HEADER};
use velander_core::solver::OracleReport;
use velander_core::{
    fit, verify_optimality, Constraint, CustomerRecord, FitProblem, LoadProfile, QuantileGrid, QuantileParamSet,
    Verdict,
};

use crate::config::{InputSpec, Resolved, RunConfig, SynthConfig};
use crate::data::{load_all, load_ingested};
use crate::output::ReportDir;

fn open(run: &Resolved, command: &str) -> anyhow::Result<ReportDir> {
    ReportDir::open(
        &run.out_dir,
        command,
        run.config.seed,
        &run.config.constraint.to_string().to_lowercase(),
    )
}

pub fn ingest(run: &Resolved) -> anyhow::Result<()> {
    let mut dir = open(run, "ingest")?;
    for ds in load_all(run)? {
        let key = ds.key();
        let mut buf = Vec::new();
        write_records_csv(&ds.records, &mut buf)?;
        let records = dir.csv(
            &format!("{key}/records.csv"),
            &RECORD_HEADER.join(","),
            std::str::from_utf8(&buf)?,
        )?;
        let report = dir.json(&format!("{key}/cleaning_report.json"), &ds.report)?;
        println!(
            "{key}: original {} incomplete {} negative {} zero_first_week {} retained {}",
            ds.report.original, ds.report.incomplete, ds.report.negative, ds.report.zero_first_week, ds.report.retained
        );
        dir.record("ingest", &key, vec![records, report]);
    }
    dir.finish(&run.echo()?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub dataset: String,
    pub constraint: String,
    pub records: usize,
    pub levels: usize,
    pub parameter_count: usize,
    pub achieved_apl: f64,
    pub iterations: usize,
    pub relative_gap: f64,
}

pub fn fit_cmd(run: &Resolved) -> anyhow::Result<()> {
    let grid = run.config.grid()?;
    let regime = run.config.constraint;
    let mut dir = open(run, "fit")?;
    for spec in inputs(&run.config)? {
        let key = spec.key();
        let records = load_ingested(run, spec)?;
        let n = records.len();
        let result = fit(&FitProblem::new(records, grid.clone(), regime)?).with_context(|| format!("fitting {key}"))?;
        let params = dir.json(&format!("{key}/params.json"), &result.params)?;
        let summary = FitSummary {
            dataset: key.clone(),
            constraint: regime.to_string(),
            records: n,
            levels: grid.len(),
            parameter_count: result.parameter_count,
            achieved_apl: result.achieved_apl,
            iterations: result.iterations,
            relative_gap: result.relative_gap,
        };
        let summary_file = dir.json(&format!("{key}/summary.json"), &summary)?;
        println!(
            "{key}: constraint {regime}, parameter_count {}, achieved_apl {}",
            result.parameter_count, result.achieved_apl
        );
        dir.record("fit", &key, vec![params, summary_file]);
    }
    dir.finish(&run.echo()?)?;
    Ok(())
}

fn inputs(config: &RunConfig) -> anyhow::Result<&[InputSpec]> {
    if config.data.inputs.is_empty() {
        bail!("no inputs configured (add [[data.inputs]] entries)");
    }
    Ok(&config.data.inputs)
}

pub fn evaluate(run: &Resolved) -> anyhow::Result<()> {
    let cfg = &run.config;
    let a = &cfg.analyses;
    let grid = cfg.grid()?;
    let regime = cfg.constraint;
    if a.tld.enabled && tld_pairs(cfg).is_empty() {
        bail!("tld requires two periods: no segment has inputs for two different years");
    }
    for (enabled, name) in [
        (a.cv.enabled, "cv"),
        (a.aggregation.enabled, "aggregation"),
        (a.curves.enabled, "curves"),
    ] {
        if enabled {
            cfg.require_seed(name)?;
        }
    }
    let datasets = load_all(run)?;
    let mut dir = open(run, "evaluate")?;

    if a.cv.enabled {
        let seed = cfg.require_seed("cv")?;
        for ds in &datasets {
            let key = ds.key();
            let report: CvReport =
                kfold_cv(&ds.records, &grid, regime, a.cv.k, seed).with_context(|| format!("analysis cv on {key}"))?;
            println!(
                "cv {key}: train {} test {}",
                report.mean_train_apl, report.mean_test_apl
            );
            let files = vec![
                dir.json(&format!("cv/{key}.json"), &report)?,
                dir.csv(&format!("cv/{key}.csv"), CvReport::CSV_HEADER, &report.to_csv())?,
            ];
            dir.record("cv", &key, files);
        }
    }

    if a.tld.enabled {
        for (earlier, later) in tld_pairs(cfg) {
            let (d1, d2) = (&datasets[earlier], &datasets[later]);
            let name = format!("{}-{}-from-{}", d2.spec.segment, d2.spec.year, d1.spec.year);
            let report: TldReport = (|| -> anyhow::Result<TldReport> {
                let theta = fit(&FitProblem::new(d1.records.clone(), grid.clone(), regime)?)?.params;
                Ok(tld(&d2.records, &grid, regime, &theta)?)
            })()
            .with_context(|| format!("analysis tld on {name}"))?;
            println!("tld {name}: {}", report.tld);
            let files = vec![
                dir.json(&format!("tld/{name}.json"), &report)?,
                dir.csv(&format!("tld/{name}.csv"), TldReport::CSV_HEADER, &report.to_csv())?,
            ];
            dir.record("tld", &name, files);
        }
    }

    if a.sld.enabled {
        for ds in &datasets {
            let key = ds.key();
            let reports = a
                .sld
                .bands()
                .into_iter()
                .map(|split| sld(&ds.records, &grid, regime, split))
                .collect::<Result<Vec<SldReport>, _>>()
                .with_context(|| format!("analysis sld on {key}"))?;
            for r in &reports {
                println!("sld {key} {}|{}: {}", r.target, r.source, r.sld);
            }
            let files = vec![
                dir.json(&format!("sld/{key}.json"), &reports)?,
                dir.csv(
                    &format!("sld/{key}.csv"),
                    SldReport::CSV_HEADER,
                    &SldReport::to_csv(&reports),
                )?,
            ];
            dir.record("sld", &key, files);
        }
    }

    if a.aggregation.enabled {
        let seed = cfg.require_seed("aggregation")?;
        for ds in &datasets {
            let key = ds.key();
            let table: AggregationTable = (|| -> anyhow::Result<AggregationTable> {
                let population = ProfiledPopulation::from_profiles(ds.profiles.clone())?;
                let agg = &a.aggregation;
                Ok(aggregation_cv(
                    &population,
                    &agg.levels,
                    &grid,
                    regime,
                    agg.samples,
                    agg.k,
                    seed,
                )?)
            })()
            .with_context(|| format!("analysis aggregation on {key}"))?;
            for r in &table.rows {
                println!(
                    "aggregation {key} level {}: normalized test APL {}",
                    r.level, r.normalized_test_apl
                );
            }
            let files = vec![
                dir.json(&format!("aggregation/{key}.json"), &table)?,
                dir.csv(
                    &format!("aggregation/{key}.csv"),
                    AggregationTable::CSV_HEADER,
                    &table.to_csv(),
                )?,
            ];
            dir.record("aggregation", &key, files);
        }
    }

    if a.curves.enabled {
        let seed = cfg.require_seed("curves")?;
        for ds in &datasets {
            let key = ds.key();
            let (fits, export) = curves(&ds.profiles, &a.curves.levels, &a.curves.taus, &grid, regime, seed)
                .with_context(|| format!("analysis curves on {key}"))?;
            let files = vec![
                dir.json(&format!("curves/{key}-fits.json"), &fits)?,
                dir.csv(&format!("curves/{key}.csv"), CurveExport::CSV_HEADER, &export.to_csv())?,
            ];
            println!("curves {key}: {} points", export.rows.len());
            dir.record("curves", &key, files);
        }
    }

    if dir.root().read_dir()?.next().is_none() {
        log::warn!("no analyses enabled; set analyses.<name>.enabled = true in the config");
    }
    dir.finish(&run.echo()?)?;
    Ok(())
}

/// Consecutive-year pairs `(earlier, later)` of input indices per segment.
fn tld_pairs(cfg: &RunConfig) -> Vec<(usize, usize)> {
    let mut by_segment: BTreeMap<&str, BTreeMap<i32, usize>> = BTreeMap::new();
    for (i, spec) in cfg.data.inputs.iter().enumerate() {
        by_segment
            .entry(&spec.segment)
            .or_default()
            .entry(spec.year)
            .or_insert(i);
    }
    let mut pairs = Vec::new();
    for years in by_segment.values() {
        let idx: Vec<usize> = years.values().copied().collect();
        pairs.extend(idx.windows(2).map(|w| (w[0], w[1])));
    }
    pairs
}

fn curves(
    profiles: &[LoadProfile],
    levels: &[usize],
    taus: &[f64],
    grid: &QuantileGrid,
    regime: Constraint,
    seed: u64,
) -> anyhow::Result<(Vec<BandFit>, CurveExport)> {
    let population = ProfiledPopulation::from_profiles(profiles.to_vec())?;
    let fits = levels
        .iter()
        .map(|&l| band_restricted_fit(&population, l, grid, regime, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let by_level: BTreeMap<usize, QuantileParamSet> = fits.iter().map(|f| (f.level, f.params.clone())).collect();
    let ec_points = [40.0, 50.0, 60.0]
        .iter()
        .map(|&p| ec_percentile(population.records(), p))
        .collect::<Result<Vec<_>, _>>()?;
    let export = export_curves(&by_level, &ec_points, taus)?;
    Ok((fits, export))
}

pub fn synth(run: &Resolved) -> anyhow::Result<()> {
    let cfg = &run.config;
    let Some(spec) = &cfg.synth else {
        bail!(
            "synth needs a [synth] section: mode = \"moment_matched\" (moment-matches data.inputs), \"velander\" or \"gaussian\""
        );
    };
    let seed = cfg.require_seed("synth")?;
    let interval = cfg.interval()?;

    let mut sets: Vec<(InputSpec, Vec<LoadProfile>)> = Vec::new();
    let mut expected_t = cfg.data.expected_t;
    match spec {
        SynthConfig::MomentMatched => {
            for (i, ds) in load_all(run)?.into_iter().enumerate() {
                let profiles = synth_gaussian_profiles(&ds.profiles, derive_seed(seed, i as u64))?;
                sets.push((ds.spec, profiles));
            }
        }
        SynthConfig::Velander {
            segment,
            years,
            customers,
            intervals,
            ec_range,
            alpha,
            b_range,
        } => {
            let population = VelanderPopulation {
                customers: *customers,
                ec_range: (ec_range[0], ec_range[1]),
                alpha: *alpha,
                b_range: (b_range[0], b_range[1]),
            };
            for &year in distinct(years)? {
                let profiles = population.profiles(*intervals, interval, derive_seed(seed, year as u64))?;
                sets.push((generated(segment, year), profiles));
            }
            expected_t = Some(*intervals);
        }
        SynthConfig::Gaussian {
            segment,
            years,
            customers,
            intervals,
            mean_range,
            std_range,
        } => {
            let population = GaussianPopulation {
                customers: *customers,
                intervals: *intervals,
                mean_range: (mean_range[0], mean_range[1]),
                std_range: (std_range[0], std_range[1]),
            };
            for &year in distinct(years)? {
                let profiles = population.profiles(interval, derive_seed(seed, year as u64))?;
                sets.push((generated(segment, year), profiles));
            }
            expected_t = Some(*intervals);
        }
    }

    let mut dir = open(run, "synth")?;
    let mut follow_up = cfg.clone();
    follow_up.synth = None;
    follow_up.out_dir = "run".into();
    follow_up.data.expected_t = expected_t;
    follow_up.data.inputs.clear();
    for (spec, profiles) in &sets {
        let key = spec.key();
        let (file, handle) = dir.create(&format!("{key}.csv"))?;
        write_profiles_csv(profiles, year_start(spec.year)?, std::io::BufWriter::new(handle))?;
        println!(
            "synth {key}: {} profiles x {} intervals",
            profiles.len(),
            profiles.first().map_or(0, |p| p.len())
        );
        dir.record("synth", &key, vec![file.clone()]);
        follow_up.data.inputs.push(InputSpec {
            segment: spec.segment.clone(),
            year: spec.year,
            path: file.into(),
        });
    }
    // A ready-to-run config over the generated files.
    let config = dir.text("config.toml", &toml::to_string(&follow_up)?)?;
    dir.record("config", "", vec![config]);
    dir.finish(&run.echo()?)?;
    Ok(())
}

fn distinct(years: &[i32]) -> anyhow::Result<&[i32]> {
    if years.is_empty() || years.iter().collect::<BTreeSet<_>>().len() != years.len() {
        bail!("synth years must be non-empty and distinct, got {years:?}");
    }
    Ok(years)
}

fn generated(segment: &str, year: i32) -> InputSpec {
    InputSpec {
        segment: segment.into(),
        year,
        path: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub dataset: String,
    pub constraint: String,
    pub customers: Vec<String>,
    pub levels: Vec<f64>,
    pub verdict: Verdict,
    pub fitted_apl: f64,
    pub best_apl: Option<f64>,
    pub gap: Option<f64>,
    pub evaluations: u64,
}

impl VerifySummary {
    fn new(
        dataset: String,
        regime: Constraint,
        records: &[CustomerRecord],
        grid: &QuantileGrid,
        r: &OracleReport,
    ) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        VerifySummary {
            dataset,
            constraint: regime.to_string(),
            customers: records.iter().map(|r| r.customer_id.clone()).collect(),
            levels: grid.levels().to_vec(),
            verdict: r.verdict,
            fitted_apl: r.candidate_apl,
            best_apl: finite(r.best_apl),
            gap: finite(r.gap),
            evaluations: r.evaluations,
        }
    }
}

/// Evenly spaced customers by EC rank.
fn spread_subset(mut records: Vec<CustomerRecord>, count: usize) -> Vec<CustomerRecord> {
    records.sort_by(|a, b| {
        a.energy
            .total_cmp(&b.energy)
            .then_with(|| a.customer_id.cmp(&b.customer_id))
    });
    if records.len() <= count {
        return records;
    }
    let n = records.len();
    (0..count)
        .map(|i| records[if count == 1 { n / 2 } else { i * (n - 1) / (count - 1) }].clone())
        .collect()
}

pub fn verify(run: &Resolved) -> anyhow::Result<()> {
    let cfg = &run.config;
    let regime = cfg.constraint;
    let grid = QuantileGrid::new(cfg.verify.levels.clone()).context("verify.levels")?;
    let mut dir = open(run, "verify")?;
    let mut failures = Vec::new();
    for spec in inputs(cfg)? {
        let key = spec.key();
        let subset = spread_subset(load_ingested(run, spec)?, cfg.verify.records);
        let problem = FitProblem::new(subset.clone(), grid.clone(), regime)?;
        let result = fit(&problem).with_context(|| format!("fitting {key}"))?;
        let report = verify_optimality(&problem, &result.params, cfg.verify.budget)?;
        let summary = VerifySummary::new(key.clone(), regime, &subset, &grid, &report);
        println!(
            "verify {key}: {:?} (fitted {}, best {:?})",
            summary.verdict, summary.fitted_apl, summary.best_apl
        );
        match report.verdict {
            Verdict::Optimal => {}
            Verdict::Inconclusive => {
                log::warn!("{key}: oracle budget exhausted, result inconclusive")
            }
            Verdict::Improvable | Verdict::Infeasible => failures.push(key.clone()),
        }
        let file = dir.json(&format!("{key}.json"), &summary)?;
        dir.record("verify", &key, vec![file]);
    }
    dir.finish(&run.echo()?)?;
    if !failures.is_empty() {
        bail!("fitted parameters failed verification for {}", failures.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, e: f64) -> CustomerRecord {
        CustomerRecord::new(id, e, e, 1).unwrap()
    }

    #[test]
    fn subset_spans_the_ec_range() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("c{i}"), (10 - i) as f64)).collect();
        let s = spread_subset(recs, 3);
        let e: Vec<f64> = s.iter().map(|r| r.energy).collect();
        assert_eq!(e, vec![1.0, 5.0, 10.0]);
    }

    #[test]
    fn tld_pairs_are_consecutive_years_per_segment() {
        let mut cfg: RunConfig = toml::from_str("").unwrap();
        for (segment, year) in [("a", 2023), ("b", 2022), ("a", 2021), ("a", 2022)] {
            cfg.data.inputs.push(InputSpec {
                segment: segment.into(),
                year,
                path: "x".into(),
            });
        }
        assert_eq!(tld_pairs(&cfg), vec![(2, 3), (3, 0)]);
    }
}
