//! Run configuration: a TOML file, optionally overridden from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use velander_core::evaluation::{PercentileBand, DEFAULT_AGGREGATION_LEVELS, DEFAULT_AGGREGATION_SAMPLES};
use velander_core::solver::DEFAULT_ORACLE_BUDGET;
use velander_core::{Constraint, Interval, QuantileGrid};

use crate::output::MissingInput;

mod constraint_name {
    use serde::{Deserialize, Deserializer, Serializer};
    use velander_core::Constraint;

    pub fn serialize<S: Serializer>(c: &Constraint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&c.to_string().to_lowercase())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Constraint, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(with = "constraint_name", default = "default_constraint")]
    pub constraint: Constraint,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub analyses: AnalysesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_constraint() -> Constraint {
    Constraint::C4
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_interval")]
    pub interval_minutes: u32,
    /// Readings per profile; defaults to a full calendar year.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_t: Option<usize>,
    /// Scale leap-year ECs by 365/366.
    #[serde(default = "yes")]
    pub leap_year_adjust: bool,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
}

fn default_interval() -> u32 {
    15
}

fn yes() -> bool {
    true
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            interval_minutes: default_interval(),
            expected_t: None,
            leap_year_adjust: true,
            inputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub segment: String,
    pub year: i32,
    pub path: PathBuf,
}

impl InputSpec {
    pub fn key(&self) -> String {
        format!("{}-{}", self.segment, self.year)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: 0.10,
            hi: 0.90,
            step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysesConfig {
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub tld: TldConfig,
    #[serde(default)]
    pub sld: SldConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub curves: CurvesConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "five")]
    pub k: usize,
}

fn five() -> usize {
    5
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { enabled: false, k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TldConfig {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SldConfig {
    #[serde(default)]
    pub enabled: bool,
    /// `[[a, b], [c, d]]`: evaluate on percentile band `(a, b)` with
    /// parameters fitted on `(c, d)`.
    #[serde(default = "default_splits")]
    pub splits: Vec<[[f64; 2]; 2]>,
}

fn default_splits() -> Vec<[[f64; 2]; 2]> {
    vec![[[0.0, 50.0], [50.0, 100.0]], [[50.0, 100.0], [0.0, 50.0]]]
}

impl Default for SldConfig {
    fn default() -> Self {
        SldConfig {
            enabled: false,
            splits: default_splits(),
        }
    }
}

impl SldConfig {
    pub fn bands(&self) -> Vec<(PercentileBand, PercentileBand)> {
        self.splits
            .iter()
            .map(|[t, s]| (PercentileBand::new(t[0], t[1]), PercentileBand::new(s[0], s[1])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "five")]
    pub k: usize,
}

fn default_levels() -> Vec<usize> {
    DEFAULT_AGGREGATION_LEVELS.to_vec()
}

fn default_samples() -> usize {
    DEFAULT_AGGREGATION_SAMPLES
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            enabled: false,
            levels: default_levels(),
            samples: default_samples(),
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_curve_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

fn default_curve_levels() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_taus() -> Vec<f64> {
    velander_core::evaluation::DEFAULT_CURVE_TAUS.to_vec()
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig {
            enabled: false,
            levels: default_curve_levels(),
            taus: default_taus(),
        }
    }
}

/// Source of synthetic profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthConfig {
    /// i.i.d. Gaussian loads matching each input profile's mean and variance.
    MomentMatched,
    /// `P = alpha E + B sqrt(E)` customers realised as profiles.
    Velander {
        segment: String,
        years: Vec<i32>,
        customers: usize,
        intervals: usize,
        ec_range: [f64; 2],
        alpha: f64,
        b_range: [f64; 2],
    },
    /// Customers with i.i.d. Gaussian loads in time.
    Gaussian {
        segment: String,
        years: Vec<i32>,
        customers: usize,
        intervals: usize,
        mean_range: [f64; 2],
        std_range: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_verify_records")]
    pub records: usize,
    #[serde(default = "default_verify_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_verify_records() -> usize {
    6
}

fn default_verify_levels() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_budget() -> u64 {
    DEFAULT_ORACLE_BUDGET
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            records: default_verify_records(),
            levels: default_verify_levels(),
            budget: default_budget(),
        }
    }
}

/// Command-line overrides of individual config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub constraint: Option<Constraint>,
    pub out_dir: Option<PathBuf>,
}

/// A configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub base: PathBuf,
    /// Output directory after applying `--out`, relative to the working
    /// directory or absolute.
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn grid(&self) -> anyhow::Result<QuantileGrid> {
        let g = self.grid;
        let grid = QuantileGrid::from_range(g.lo, g.hi, g.step).context("invalid grid")?;
        if grid.len() < 2 {
            bail!("grid {}..{} step {} yields fewer than 2 levels", g.lo, g.hi, g.step);
        }
        Ok(grid)
    }

    pub fn interval(&self) -> anyhow::Result<Interval> {
        Ok(Interval::from_minutes(self.data.interval_minutes)?)
    }

    pub fn require_seed(&self, purpose: &str) -> anyhow::Result<u64> {
        self.seed
            .with_context(|| format!("{purpose} is stochastic and needs a seed (config `seed` or --seed)"))
    }
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Resolved> {
    let (mut config, base) = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(MissingInput(p.to_path_buf()).into());
            }
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (config, base)
        }
        None => (toml::from_str::<RunConfig>("")?, PathBuf::new()),
    };

    if let Some(seed) = overrides.seed {
        log::info!("override seed: {:?} -> {seed}", config.seed);
        config.seed = Some(seed);
    }
    if let Some(c) = overrides.constraint {
        log::info!("override constraint: {} -> {c}", config.constraint);
        config.constraint = c;
    }
    let out_dir = match &overrides.out_dir {
        Some(dir) => {
            log::info!("override out_dir: {} -> {}", config.out_dir.display(), dir.display());
            config.out_dir = dir.clone();
            dir.clone()
        }
        None => base.join(&config.out_dir),
    };
    config.grid()?;
    config.interval()?;
    Ok(Resolved { config, base, out_dir })
}

impl Resolved {
    pub fn input_path(&self, spec: &InputSpec) -> PathBuf {
        self.base.join(&spec.path)
    }

    pub fn echo(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(&self.config)?)
    }
}
