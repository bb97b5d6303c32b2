//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p velander-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use velander_core::evaluation::{
    aggregation_cv, sample_aggregations, sld, sld_default, tld, GaussianPopulation, PercentileBand, ProfiledPopulation,
    VelanderPopulation,
};
use velander_core::ingest::clean_profiles;
use velander_core::solver::{DEFAULT_ORACLE_BUDGET, DEFAULT_TOLERANCE};
use velander_core::{
    fit, verify_optimality, Constraint, CustomerRecord, FitProblem, Interval, QuantileGrid, QuantileParamSet, Verdict,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn default_grid() -> QuantileGrid {
    QuantileGrid::from_range(0.10, 0.90, 0.01).unwrap()
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn q(p: &QuantileParamSet, k: usize, e: f64) -> f64 {
    p.alphas[k] * e + p.betas[k] * e.sqrt()
}

fn fit_params(records: &[CustomerRecord], grid: &QuantileGrid, regime: Constraint) -> Result<QuantileParamSet, String> {
    Ok(ok(fit(&ok(FitProblem::new(records.to_vec(), grid.clone(), regime))?))?.params)
}

/// The recovery population: 5000 customers, log-uniform EC over [1e3, 1e6],
/// `P = 0.1 E + B sqrt(E)` with `B ~ U[1, 3]`.
fn recovery_population() -> (VelanderPopulation, Vec<CustomerRecord>) {
    let pop = VelanderPopulation::default();
    assert_eq!(pop.customers, 5000);
    let records = pop.records(4).unwrap();
    (pop, records)
}

fn oracle_instance(rng: &mut ChaCha8Rng) -> (Vec<CustomerRecord>, QuantileGrid) {
    let n = rng.random_range(1..=6);
    let records = (0..n)
        .map(|i| {
            let e: f64 = rng.random_range(1.0..1000.0);
            let p = rng.random_range(0.01..0.2) * e + rng.random_range(0.2..4.0) * e.sqrt();
            CustomerRecord::new(format!("c{i}"), e, p, 1).unwrap()
        })
        .collect();
    let k = rng.random_range(1..=3);
    let mut levels: Vec<f64> = (0..k).map(|_| rng.random_range(1..100) as f64 / 100.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    (records, QuantileGrid::new(levels).unwrap())
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let (records, grid) = oracle_instance(&mut rng);
        for regime in Constraint::ALL {
            let problem = ok(FitProblem::new(records.clone(), grid.clone(), regime))?;
            let result = ok(fit(&problem))?;
            let report = ok(verify_optimality(&problem, &result.params, DEFAULT_ORACLE_BUDGET))?;
            ensure(report.verdict == Verdict::Optimal, || {
                format!("case {case} {regime}: verdict {:?}", report.verdict)
            })?;
            // Interpolating instances have a zero optimum; measure the excess
            // against the peak scale there.
            let scale = records.iter().map(|r| r.peak).fold(0.0, f64::max);
            let rel = (result.achieved_apl - report.best_apl) / report.best_apl.max(1e-6 * scale);
            ensure(rel <= 1e-4, || format!("case {case} {regime}: relative excess {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "100 fits optimal, worst relative excess {worst:.2e}, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_2() -> Check {
    let grid = default_grid();
    ensure(grid.len() == 81, || format!("default grid has {} levels", grid.len()))?;
    let records = VelanderPopulation {
        customers: 300,
        ..Default::default()
    }
    .records(2)
    .unwrap();
    let c1 = ok(FitProblem::new(records.clone(), grid.clone(), Constraint::C1))?.parameter_count();
    let c4 = ok(FitProblem::new(records.clone(), grid.clone(), Constraint::C4))?.parameter_count();
    ensure(c1 == 162 && c4 == 82, || format!("C1 {c1}, C4 {c4}"))?;
    let p4 = fit_params(&records, &grid, Constraint::C4)?;
    let distinct_alphas = p4.alphas.iter().filter(|&&a| a != p4.alphas[0]).count();
    ensure(distinct_alphas == 0, || {
        format!("{distinct_alphas} C4 alphas differ from the first")
    })?;
    Ok(format!("C1 {c1}, C4 {c4} (one shared alpha)"))
}

fn criterion_3() -> Check {
    let grid = default_grid();
    let records = VelanderPopulation {
        customers: 1000,
        ..Default::default()
    }
    .records(3)
    .unwrap();
    let train: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let max_e = train.iter().cloned().fold(0.0, f64::max);
    let scan: Vec<f64> = (0..=400)
        .map(|i| 10.0 * max_e * 10f64.powf(-12.0 * (1.0 - i as f64 / 400.0)))
        .collect();
    let mut summary = Vec::new();
    for regime in [Constraint::C2, Constraint::C3, Constraint::C4] {
        let p = fit_params(&records, &grid, regime)?;
        let points: Vec<f64> = match regime {
            Constraint::C2 => train.clone(),
            _ => train.iter().chain(&scan).cloned().collect(),
        };
        let mut worst: f64 = 0.0;
        for &e in &points {
            for k in 1..grid.len() {
                worst = worst.max(q(&p, k - 1, e) - q(&p, k, e));
            }
        }
        ensure(worst <= 1e-9, || format!("{regime}: crossing of {worst:e} kW"))?;
        summary.push(format!("{regime} {:.1e}", worst.max(0.0)));
    }
    Ok(format!("max violation {}", summary.join(", ")))
}

fn criterion_4(pop: &VelanderPopulation, records: &[CustomerRecord]) -> Check {
    let start = Instant::now();
    let grid = default_grid();
    let p = fit_params(records, &grid, Constraint::C4)?;
    within_budget(start, Duration::from_secs(300))?;
    let alpha_err = (p.alphas[0] - pop.true_alpha()).abs() / pop.true_alpha();
    ensure(alpha_err <= 0.02, || {
        format!("alpha {} vs {}", p.alphas[0], pop.true_alpha())
    })?;
    let mut out = format!("alpha {:.5} ({:.2}%)", p.alphas[0], 100.0 * alpha_err);
    for tau in [0.2, 0.5, 0.8] {
        let k = grid.nearest(tau);
        ensure((grid.levels()[k] - tau).abs() < 1e-12, || {
            format!("{tau} is not on the grid")
        })?;
        // B ~ U[b_lo, b_hi] has quantile function b_lo + tau (b_hi - b_lo).
        let truth = pop.b_range.0 + tau * (pop.b_range.1 - pop.b_range.0);
        let err = (p.betas[k] - truth).abs() / truth;
        ensure(err <= 0.05, || format!("beta_{tau} {} vs {truth}", p.betas[k]))?;
        write!(out, ", beta_{tau} {:.4} ({:.2}%)", p.betas[k], 100.0 * err).unwrap();
    }
    write!(out, ", {:.1?}", start.elapsed()).unwrap();
    Ok(out)
}

fn criterion_5(records: &[CustomerRecord]) -> Check {
    let grid = default_grid();
    let p = fit_params(records, &grid, Constraint::C1)?;
    let k = grid.nearest(0.5);
    let below = records.iter().filter(|r| r.peak < q(&p, k, r.energy)).count();
    let share = below as f64 / records.len() as f64;
    ensure((share - 0.5).abs() <= 0.03, || format!("coverage {share}"))?;
    Ok(format!("coverage {share:.4}"))
}

fn criterion_6() -> Check {
    let grid = default_grid();
    let records = VelanderPopulation {
        customers: 1000,
        ..Default::default()
    }
    .records(6)
    .unwrap();
    let bound = 2.0 * DEFAULT_TOLERANCE;
    let mut worst: f64 = 0.0;
    for regime in Constraint::ALL {
        let theta = fit_params(&records, &grid, regime)?;
        let t = ok(tld(&records, &grid, regime, &theta))?.tld;
        ensure(t.abs() <= bound, || format!("TLD(T|T) {regime} = {t:e}"))?;
        for band in [
            PercentileBand { lo: 0.0, hi: 50.0 },
            PercentileBand { lo: 50.0, hi: 100.0 },
        ] {
            let s = ok(sld(&records, &grid, regime, (band, band)))?.sld;
            ensure(s.abs() <= bound, || format!("SLD({band}|{band}) {regime} = {s:e}"))?;
            worst = worst.max(s.abs());
        }
        worst = worst.max(t.abs());
    }
    Ok(format!("max |identity loss| {worst:.1e} over all regimes"))
}

fn criterion_7() -> Check {
    let pop = VelanderPopulation {
        customers: 2000,
        ..Default::default()
    };
    let year1 = pop.records(71).unwrap();
    let year2 = pop.records(72).unwrap();
    let grid = default_grid();
    let theta = fit_params(&year1, &grid, Constraint::C4)?;
    let t = ok(tld(&year2, &grid, Constraint::C4, &theta))?.tld;
    ensure(t < 0.02, || format!("TLD {t}"))?;
    Ok(format!("TLD {:.3}%", 100.0 * t))
}

fn criterion_8(records: &[CustomerRecord]) -> Check {
    let reports = ok(sld_default(records, &default_grid(), Constraint::C4))?;
    let mut out = Vec::new();
    for r in &reports {
        ensure(r.sld < 0.05, || format!("SLD({}|{}) {}", r.target, r.source, r.sld))?;
        out.push(format!("SLD({}|{}) {:.3}%", r.target, r.source, 100.0 * r.sld));
    }
    Ok(out.join(", "))
}

/// `customers` i.i.d. Gaussian profiles that pass cleaning.
fn gaussian_population(customers: usize, intervals: usize, seed: u64) -> ProfiledPopulation {
    let profiles = GaussianPopulation {
        customers: customers + customers / 2,
        intervals,
        mean_range: (0.5, 3.0),
        std_range: (0.05, 0.15),
    }
    .profiles(Interval::QUARTER_HOUR, seed)
    .unwrap();
    let (mut profiles, _) = clean_profiles(profiles, intervals);
    assert!(profiles.len() >= customers, "only {} clean profiles", profiles.len());
    profiles.truncate(customers);
    ProfiledPopulation::from_profiles(profiles).unwrap()
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let pop = gaussian_population(500, 2688, 9);
    let table = ok(aggregation_cv(
        &pop,
        &[2, 5, 10, 25],
        &default_grid(),
        Constraint::C4,
        1000,
        5,
        9,
    ))?;
    within_budget(start, Duration::from_secs(600))?;
    let norm: Vec<f64> = table.rows.iter().map(|r| r.normalized_test_apl).collect();
    ensure(norm.windows(2).all(|w| w[1] < w[0]), || {
        format!("normalized test APL {norm:?}")
    })?;
    let shown: Vec<String> = norm.iter().map(|v| format!("{v:.4}")).collect();
    Ok(format!(
        "normalized test APL {} ({:.1?})",
        shown.join(" > "),
        start.elapsed()
    ))
}

fn criterion_10() -> Check {
    let pop = gaussian_population(120, 672, 10);
    let by_id: BTreeMap<&str, &[f64]> = pop
        .profiles()
        .iter()
        .map(|p| (p.customer_id.as_str(), p.values.as_slice()))
        .collect();
    let mut checked = 0;
    for level in [1, 2, 5, 10, 25] {
        for s in ok(sample_aggregations(&pop, level, 300, 100 + level as u64))? {
            let members: Vec<&[f64]> = s.members.iter().map(|id| by_id[id.as_str()]).collect();
            let energies: Vec<f64> = members.iter().map(|v| v.iter().sum::<f64>()).collect();
            let peaks: Vec<f64> = members
                .iter()
                .map(|v| v.iter().cloned().fold(f64::MIN, f64::max))
                .collect();
            let e_sum: f64 = energies.iter().sum();
            let max_peak = peaks.iter().cloned().fold(f64::MIN, f64::max);
            let sum_peak: f64 = peaks.iter().sum();
            let slack = 1e-12 * sum_peak;
            ensure(s.members.len() == level, || {
                format!("level {level}: {} members", s.members.len())
            })?;
            ensure((s.record.energy - e_sum).abs() <= 1e-12 * e_sum, || {
                format!("level {level}: EC {} vs member sum {e_sum}", s.record.energy)
            })?;
            ensure(
                max_peak - slack <= s.record.peak && s.record.peak <= sum_peak + slack,
                || format!("level {level}: peak {} outside [{max_peak}, {sum_peak}]", s.record.peak),
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} samples additive and within peak bounds"))
}

fn velander() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_velander"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run_ok(cmd: &mut Command) -> Result<String, String> {
    let out = ok(cmd.output())?;
    ensure(out.status.success(), || {
        format!("{cmd:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_11() -> Check {
    let tmp = ok(tempfile::tempdir())?;
    let t = 1344;
    let normal = |t: usize| 0.3 + 0.1 * (t % 96) as f64 / 96.0;
    let mut rows: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    rows.push(("a", (0..t).map(|i| Some(normal(i))).collect()));
    // Zero for all but the last interval of the first week: kept.
    rows.push((
        "b",
        (0..t).map(|i| Some(if i < 671 { 0.0 } else { normal(i) })).collect(),
    ));
    rows.push(("c", (0..t).map(|i| Some(2.0 * normal(i))).collect()));
    let mut gap: Vec<_> = (0..t).map(|i| Some(normal(i))).collect();
    gap[900] = None;
    rows.push(("gap", gap));
    rows.push(("short", (0..t - 1).map(|i| Some(normal(i))).collect()));
    let mut neg: Vec<_> = (0..t).map(|i| Some(normal(i))).collect();
    neg[10] = Some(-0.2);
    rows.push(("neg", neg));
    rows.push((
        "zero",
        (0..t).map(|i| Some(if i < 672 { 0.0 } else { normal(i) })).collect(),
    ));
    // Missing and negative: counted once, as incomplete.
    let mut both: Vec<_> = (0..t).map(|i| Some(normal(i))).collect();
    both[5] = Some(-1.0);
    both[6] = None;
    rows.push(("both", both));

    let mut csv = String::from("customer_id,timestamp,load_kw\n");
    for (id, values) in &rows {
        for (i, v) in values.iter().enumerate() {
            let ts = format!("2022-01-{:02}T{:02}:{:02}:00", 1 + i / 96, (i % 96) / 4, 15 * (i % 4));
            match v {
                Some(v) => writeln!(csv, "{id},{ts},{v}").unwrap(),
                None => writeln!(csv, "{id},{ts},").unwrap(),
            }
        }
    }
    ok(fs::write(tmp.path().join("meters.csv"), csv))?;
    let config = format!(
        "seed = 1\n[data]\nexpected_t = {t}\n[[data.inputs]]\nsegment = \"fx\"\nyear = 2022\npath = \"meters.csv\"\n"
    );
    let config_path = tmp.path().join("run.toml");
    ok(fs::write(&config_path, config))?;
    run_ok(velander().arg("ingest").arg("--config").arg(&config_path))?;

    let report_path = tmp.path().join("out/ingest/fx-2022/cleaning_report.json");
    let report: serde_json::Value = ok(serde_json::from_str(&ok(fs::read_to_string(&report_path))?))?;
    let counts: Vec<u64> = ["original", "incomplete", "negative", "zero_first_week", "retained"]
        .iter()
        .map(|k| report[k].as_u64().unwrap_or(u64::MAX))
        .collect();
    ensure(counts == [8, 3, 1, 1, 3], || format!("counts {counts:?}"))?;
    let records = ok(fs::read_to_string(tmp.path().join("out/ingest/fx-2022/records.csv")))?;
    let ids: Vec<&str> = records.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    ensure(ids == ["a", "b", "c"], || format!("retained {ids:?}"))?;
    Ok("original 8 -> incomplete 3, negative 1, zero first week 1 -> retained 3".into())
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn criterion_12() -> Check {
    let tmp = ok(tempfile::tempdir())?;
    let config = "seed = 12\nconstraint = \"c4\"\n\
        [synth]\nmode = \"gaussian\"\nsegment = \"syn\"\nyears = [2022, 2023]\ncustomers = 60\n\
        intervals = 672\nmean_range = [0.2, 5.0]\nstd_range = [0.02, 0.1]\n\
        [analyses.cv]\nenabled = true\n[analyses.tld]\nenabled = true\n[analyses.sld]\nenabled = true\n\
        [analyses.aggregation]\nenabled = true\nlevels = [2, 5]\nsamples = 100\n\
        [analyses.curves]\nenabled = true\n";
    let synth_config = tmp.path().join("synth.toml");
    ok(fs::write(&synth_config, config))?;
    run_ok(velander().arg("synth").arg("--config").arg(&synth_config))?;
    let run_config = tmp.path().join("out/synth/config.toml");
    let report = tmp.path().join("out/synth/run/evaluate");

    let mut runs = Vec::new();
    for threads in ["4", "4", "1"] {
        run_ok(
            velander()
                .env("RAYON_NUM_THREADS", threads)
                .arg("evaluate")
                .arg("--config")
                .arg(&run_config),
        )?;
        runs.push((threads, read_tree(&report)));
    }
    let (_, first) = &runs[0];
    let analyses = ["cv", "tld", "sld", "aggregation", "curves"];
    for a in analyses {
        ensure(first.keys().any(|k| k.starts_with(&format!("{a}/"))), || {
            format!("no {a} output")
        })?;
    }
    for (threads, files) in &runs[1..] {
        ensure(files.keys().eq(first.keys()), || {
            format!("file sets differ with {threads} threads")
        })?;
        for (name, bytes) in files {
            ensure(first[name] == *bytes, || {
                format!("{name} differs with {threads} threads")
            })?;
        }
    }
    Ok(format!(
        "{} files byte-identical across 3 runs (4, 4 and 1 threads)",
        first.len()
    ))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, check: &mut dyn FnMut() -> Check| {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    };

    let (pop, records) = recovery_population();
    report(1, "oracle optimality", &mut criterion_1);
    report(2, "parameter counts", &mut criterion_2);
    report(3, "non-crossing", &mut criterion_3);
    report(4, "parameter recovery", &mut || criterion_4(&pop, &records));
    report(5, "median coverage", &mut || criterion_5(&records));
    report(6, "identity losses", &mut criterion_6);
    report(7, "year-ahead transfer", &mut criterion_7);
    report(8, "scaling transfer", &mut || criterion_8(&records));
    report(9, "aggregation trend", &mut criterion_9);
    report(10, "aggregation arithmetic", &mut criterion_10);
    report(11, "cleaning rules", &mut criterion_11);
    report(12, "determinism", &mut criterion_12);

    if failures > 0 {
        println!("{failures} of 12 criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
