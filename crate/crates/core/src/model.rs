//! Domain types and the pure functions of the quantile Velander formula.
//!
//! Units follow the smart-meter convention: loads are in kW and an EC is the
//! sum of interval-mean loads times the interval length expressed in
//! 15-minute units (kW·15min). `alpha` therefore carries kW per kW·15min and
//! `beta` kW per sqrt(kW·15min).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit of energy values stored in records.
pub const ENERGY_UNIT: &str = "kW-15min";
/// Unit of load values.
pub const LOAD_UNIT: &str = "kW";

/// Pairwise (cascade) summation. Deterministic for a given input order and
/// with an error bound growing like `log2(n)` instead of `n`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Length of one metering interval, in whole minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval(u32);

impl Interval {
    pub const QUARTER_HOUR: Interval = Interval(15);

    pub fn from_minutes(minutes: u32) -> Result<Self> {
        if minutes == 0 {
            return Err(Error::InvalidInput("interval must be at least one minute".into()));
        }
        Ok(Interval(minutes))
    }

    pub fn minutes(self) -> u32 {
        self.0
    }

    /// Interval length in 15-minute energy units.
    pub fn energy_units(self) -> f64 {
        f64::from(self.0) / 15.0
    }

    /// Number of intervals in a whole day, if the interval divides a day.
    pub fn per_day(self) -> Option<usize> {
        (1440 % self.0 == 0).then(|| (1440 / self.0) as usize)
    }
}

impl Default for Interval {
    fn default() -> Self {
        Interval::QUARTER_HOUR
    }
}

/// One customer's time series of interval-mean power.
///
/// Profiles built by [`LoadProfile::new`] hold only finite values. The meter
/// parser may produce profiles carrying `NaN` as a missing-reading marker;
/// those never survive [`crate::ingest::clean_profiles`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub customer_id: String,
    pub values: Vec<f64>,
    pub interval: Interval,
}

impl LoadProfile {
    pub fn new(customer_id: impl Into<String>, values: Vec<f64>, interval: Interval) -> Result<Self> {
        let customer_id = customer_id.into();
        if values.is_empty() {
            return Err(Error::EmptyProfile);
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "profile {customer_id} has a non-finite value at interval {t}"
            )));
        }
        Ok(LoadProfile {
            customer_id,
            values,
            interval,
        })
    }

    /// Builds a profile that may contain missing-value markers (`NaN`).
    pub(crate) fn with_missing(customer_id: String, values: Vec<f64>, interval: Interval) -> Self {
        LoadProfile {
            customer_id,
            values,
            interval,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

/// A customer (or an aggregation of customers) reduced to its EC and peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerRecord {
    pub customer_id: String,
    /// EC in kW·15min.
    pub energy: f64,
    /// Peak load in kW.
    pub peak: f64,
    /// Aggregation level; 1 for an individual customer.
    pub weight_level: usize,
}

impl CustomerRecord {
    pub fn new(customer_id: impl Into<String>, energy: f64, peak: f64, weight_level: usize) -> Result<Self> {
        let customer_id = customer_id.into();
        if !energy.is_finite() || energy < 0.0 {
            return Err(Error::InvalidInput(format!(
                "customer {customer_id}: energy must be finite and non-negative, got {energy}"
            )));
        }
        if !peak.is_finite() || peak < 0.0 {
            return Err(Error::InvalidInput(format!(
                "customer {customer_id}: peak must be finite and non-negative, got {peak}"
            )));
        }
        if weight_level == 0 {
            return Err(Error::InvalidInput(format!(
                "customer {customer_id}: aggregation level must be at least 1"
            )));
        }
        Ok(CustomerRecord {
            customer_id,
            energy,
            peak,
            weight_level,
        })
    }

    /// Like [`CustomerRecord::new`], additionally checking that the mean load
    /// implied by `energy` over `intervals` does not exceed the peak.
    pub fn with_length(
        customer_id: impl Into<String>,
        energy: f64,
        peak: f64,
        weight_level: usize,
        intervals: usize,
        interval: Interval,
    ) -> Result<Self> {
        let record = Self::new(customer_id, energy, peak, weight_level)?;
        let mean = energy / (intervals as f64 * interval.energy_units());
        if mean > peak * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "customer {}: mean load {mean} exceeds peak {peak}",
                record.customer_id
            )));
        }
        Ok(record)
    }
}

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidGrid("no quantile levels".into()));
        }
        for &tau in &levels {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidTau(tau));
            }
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("levels must be strictly increasing".into()));
        }
        Ok(QuantileGrid { levels })
    }

    /// Evenly spaced levels `lo, lo + step, ..., hi`.
    ///
    /// Levels are computed on a 1e-9 integer lattice so that decimal specs
    /// such as `0.10..0.90 step 0.01` give the nearest doubles to the decimals.
    pub fn from_range(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidGrid(format!("bad range lo={lo} hi={hi} step={step}")));
        }
        const SCALE: f64 = 1e9;
        let lo_i = (lo * SCALE).round() as i64;
        let hi_i = (hi * SCALE).round() as i64;
        let step_i = (step * SCALE).round() as i64;
        if step_i <= 0 {
            return Err(Error::InvalidGrid(format!("step {step} too small")));
        }
        let count = (hi_i - lo_i) / step_i + 1;
        let levels = (0..count).map(|k| (lo_i + k * step_i) as f64 / SCALE).collect();
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the level closest to `tau`.
    pub fn nearest(&self, tau: f64) -> usize {
        let mut best = 0;
        for (k, &level) in self.levels.iter().enumerate() {
            if (level - tau).abs() < (self.levels[best] - tau).abs() {
                best = k;
            }
        }
        best
    }
}

impl Default for QuantileGrid {
    /// `{0.10, 0.11, ..., 0.90}`: 81 levels.
    fn default() -> Self {
        QuantileGrid::from_range(0.10, 0.90, 0.01).expect("default grid is valid")
    }
}

impl<'de> Deserialize<'de> for QuantileGrid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let levels = Vec::<f64>::deserialize(deserializer)?;
        QuantileGrid::new(levels).map_err(serde::de::Error::custom)
    }
}

/// Non-crossing regime, in ascending order of strictness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Unconstrained: independent quantile regressions.
    C1,
    /// No crossing at any training EC.
    C2,
    /// Both coefficient sequences non-decreasing in the level.
    C3,
    /// One shared `alpha`, non-decreasing `beta`.
    C4,
}

impl Constraint {
    pub const ALL: [Constraint; 4] = [Constraint::C1, Constraint::C2, Constraint::C3, Constraint::C4];

    /// Number of free parameters for a grid of `levels` quantile levels.
    pub fn parameter_count(self, levels: usize) -> usize {
        match self {
            Constraint::C4 => levels + 1,
            _ => 2 * levels,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Constraint::C1 => "C1",
            Constraint::C2 => "C2",
            Constraint::C3 => "C3",
            Constraint::C4 => "C4",
        };
        f.write_str(name)
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c1" => Ok(Constraint::C1),
            "c2" => Ok(Constraint::C2),
            "c3" => Ok(Constraint::C3),
            "c4" => Ok(Constraint::C4),
            other => Err(Error::InvalidInput(format!("unknown constraint regime '{other}'"))),
        }
    }
}

/// Fitted coefficients `(alpha_tau, beta_tau)` for every level of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamSetWire", try_from = "ParamSetWire")]
pub struct QuantileParamSet {
    pub grid: QuantileGrid,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub constraint: Constraint,
    /// `(min, max)` of the training ECs.
    pub fit_ec_range: (f64, f64),
}

impl QuantileParamSet {
    pub fn new(
        grid: QuantileGrid,
        alphas: Vec<f64>,
        betas: Vec<f64>,
        constraint: Constraint,
        fit_ec_range: (f64, f64),
    ) -> Result<Self> {
        if alphas.len() != grid.len() || betas.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} levels but {} alphas and {} betas",
                grid.len(),
                alphas.len(),
                betas.len()
            )));
        }
        if alphas.iter().chain(&betas).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(QuantileParamSet {
            grid,
            alphas,
            betas,
            constraint,
            fit_ec_range,
        })
    }

    /// Predicted `tau`-quantile of the peak load at level index `k`.
    pub fn predict(&self, k: usize, energy: f64) -> f64 {
        self.alphas[k] * energy + self.betas[k] * energy.sqrt()
    }

    /// Largest violation of the regime's structural invariants, in the units
    /// of the violated quantity (coefficients for C3/C4, kW for C2).
    /// `ecs` are the ECs at which C2 is checked.
    pub fn max_violation(&self, ecs: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        let pairs = self.alphas.len().saturating_sub(1);
        match self.constraint {
            Constraint::C1 => {}
            Constraint::C2 => {
                for &x in ecs {
                    for k in 0..pairs {
                        worst = worst.max(self.predict(k, x) - self.predict(k + 1, x));
                    }
                }
            }
            Constraint::C3 => {
                for k in 0..pairs {
                    worst = worst.max(self.alphas[k] - self.alphas[k + 1]);
                    worst = worst.max(self.betas[k] - self.betas[k + 1]);
                }
            }
            Constraint::C4 => {
                for k in 0..pairs {
                    worst = worst.max((self.alphas[k] - self.alphas[k + 1]).abs());
                    worst = worst.max(self.betas[k] - self.betas[k + 1]);
                }
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct UnitsWire {
    energy: String,
    load: String,
}

#[derive(Serialize, Deserialize)]
struct ParamSetWire {
    constraint: Constraint,
    levels: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    fit_ec_range: [f64; 2],
    units: UnitsWire,
}

impl From<&QuantileParamSet> for ParamSetWire {
    fn from(p: &QuantileParamSet) -> Self {
        ParamSetWire {
            constraint: p.constraint,
            levels: p.grid.levels().to_vec(),
            alpha: p.alphas.clone(),
            beta: p.betas.clone(),
            fit_ec_range: [p.fit_ec_range.0, p.fit_ec_range.1],
            units: UnitsWire {
                energy: ENERGY_UNIT.into(),
                load: LOAD_UNIT.into(),
            },
        }
    }
}

impl From<QuantileParamSet> for ParamSetWire {
    fn from(p: QuantileParamSet) -> Self {
        ParamSetWire::from(&p)
    }
}

impl TryFrom<ParamSetWire> for QuantileParamSet {
    type Error = Error;

    fn try_from(w: ParamSetWire) -> Result<Self> {
        if w.units.energy != ENERGY_UNIT || w.units.load != LOAD_UNIT {
            return Err(Error::InvalidInput(format!(
                "unsupported units energy={} load={}",
                w.units.energy, w.units.load
            )));
        }
        QuantileParamSet::new(
            QuantileGrid::new(w.levels)?,
            w.alpha,
            w.beta,
            w.constraint,
            (w.fit_ec_range[0], w.fit_ec_range[1]),
        )
    }
}

/// Reduces a load profile to its `(EC, peak)` record.
pub fn compute_features(profile: &LoadProfile) -> Result<CustomerRecord> {
    if profile.values.is_empty() {
        return Err(Error::EmptyProfile);
    }
    if profile.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "profile {} contains missing or non-finite values",
            profile.customer_id
        )));
    }
    let peak = profile.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let energy = pairwise_sum(&profile.values) * profile.interval.energy_units();
    Ok(CustomerRecord {
        customer_id: profile.customer_id.clone(),
        energy,
        peak,
        weight_level: 1,
    })
}

/// `alpha * E + beta * sqrt(E)`.
pub fn velander_quantile(energy: f64, alpha: f64, beta: f64) -> Result<f64> {
    if energy < 0.0 || energy.is_nan() {
        return Err(Error::NegativeEc(energy));
    }
    Ok(alpha * energy + beta * energy.sqrt())
}

#[inline]
pub(crate) fn pinball(delta: f64, tau: f64) -> f64 {
    if delta < 0.0 {
        (tau - 1.0) * delta
    } else {
        tau * delta
    }
}

pub fn pinball_loss(observed: f64, predicted: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    Ok(pinball(observed - predicted, tau))
}

/// Mean pinball loss over all records and all levels of `params`.
pub fn average_pinball_loss(records: &[CustomerRecord], params: &QuantileParamSet) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if let Some(r) = records.iter().find(|r| r.energy < 0.0) {
        return Err(Error::NegativeEc(r.energy));
    }
    Ok(apl_unchecked(records, params))
}

pub(crate) fn apl_unchecked(records: &[CustomerRecord], params: &QuantileParamSet) -> f64 {
    let levels = params.grid.levels();
    let mut losses = Vec::with_capacity(records.len() * levels.len());
    for r in records {
        let root = r.energy.sqrt();
        for (k, &tau) in levels.iter().enumerate() {
            let predicted = params.alphas[k] * r.energy + params.betas[k] * root;
            losses.push(pinball(r.peak - predicted, tau));
        }
    }
    pairwise_sum(&losses) / losses.len() as f64
}
