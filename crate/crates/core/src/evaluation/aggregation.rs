//! Aggregation studies: virtual customers built from random groups of real
//! ones, their cross-validated losses, and band-restricted fits per level.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_f64, cv::kfold_cv, derive_seed, stream_rng};
use crate::error::{Error, Result};
use crate::ingest::ec_percentile;
use crate::model::{
    compute_features, pairwise_sum, Constraint, CustomerRecord, LoadProfile, QuantileGrid, QuantileParamSet,
};
use crate::solver::{fit, FitProblem};

pub const DEFAULT_AGGREGATION_LEVELS: [usize; 4] = [2, 5, 10, 25];
pub const DEFAULT_AGGREGATION_SAMPLES: usize = 1000;

/// Profiles together with their records, all on a common time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledPopulation {
    profiles: Vec<LoadProfile>,
    records: Vec<CustomerRecord>,
}

impl ProfiledPopulation {
    /// Profiles must share length and interval and have no negative readings.
    pub fn from_profiles(profiles: Vec<LoadProfile>) -> Result<Self> {
        let first = profiles.first().ok_or(Error::EmptyRecords)?;
        let (t, interval) = (first.len(), first.interval);
        if let Some(p) = profiles.iter().find(|p| p.len() != t || p.interval != interval) {
            return Err(Error::InvalidInput(format!(
                "profile {} does not share the population's time axis ({} x {} min)",
                p.customer_id,
                t,
                interval.minutes()
            )));
        }
        // Peak bounds of aggregates only hold for non-negative loads.
        if let Some(p) = profiles.iter().find(|p| p.values.iter().any(|&v| v < 0.0)) {
            return Err(Error::InvalidInput(format!(
                "profile {} has negative readings; aggregate cleaned profiles only",
                p.customer_id
            )));
        }
        let records = profiles.iter().map(compute_features).collect::<Result<Vec<_>>>()?;
        Ok(ProfiledPopulation { profiles, records })
    }

    pub fn profiles(&self) -> &[LoadProfile] {
        &self.profiles
    }

    pub fn records(&self) -> &[CustomerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The virtual customer formed by `members` (indices, in order).
    fn aggregate(&self, members: &[usize]) -> Result<CustomerRecord> {
        if members.len() == 1 {
            return Ok(self.records[members[0]].clone());
        }
        let energies: Vec<f64> = members.iter().map(|&i| self.records[i].energy).collect();
        let mut summed = self.profiles[members[0]].values.clone();
        for &i in &members[1..] {
            for (s, v) in summed.iter_mut().zip(&self.profiles[i].values) {
                *s += v;
            }
        }
        let peak = summed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let id = members
            .iter()
            .map(|&i| self.records[i].customer_id.as_str())
            .collect::<Vec<_>>()
            .join("+");
        CustomerRecord::new(id, pairwise_sum(&energies), peak, members.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSample {
    pub level: usize,
    pub members: Vec<String>,
    pub record: CustomerRecord,
}

/// `count` independent groups of `level` distinct customers. Groups are drawn
/// with replacement across samples; members are listed in population order.
pub fn sample_aggregations(
    population: &ProfiledPopulation,
    level: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<AggregationSample>> {
    let n = population.len();
    if level == 0 || level > n {
        return Err(Error::AggregationLevel { level, population: n });
    }
    (0..count)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            let mut members = index::sample(&mut rng, n, level).into_vec();
            members.sort_unstable();
            Ok(AggregationSample {
                level,
                members: members
                    .iter()
                    .map(|&i| population.records[i].customer_id.clone())
                    .collect(),
                record: population.aggregate(&members)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    pub level: usize,
    pub samples: usize,
    pub mean_train_apl: f64,
    pub mean_test_apl: f64,
    pub normalized_train_apl: f64,
    pub normalized_test_apl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTable {
    pub constraint: Constraint,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<AggregationRow>,
}

impl AggregationTable {
    pub const CSV_HEADER: &'static str =
        "level,samples,mean_train_apl,mean_test_apl,normalized_train_apl,normalized_test_apl";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.level,
                r.samples,
                csv_f64(r.mean_train_apl),
                csv_f64(r.mean_test_apl),
                csv_f64(r.normalized_train_apl),
                csv_f64(r.normalized_test_apl)
            ));
        }
        out
    }
}

/// k-fold CV on `samples` aggregations per level; losses are also reported
/// divided by the level.
pub fn aggregation_cv(
    population: &ProfiledPopulation,
    levels: &[usize],
    grid: &QuantileGrid,
    regime: Constraint,
    samples: usize,
    k: usize,
    seed: u64,
) -> Result<AggregationTable> {
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let level_seed = derive_seed(seed, level as u64);
        let drawn = sample_aggregations(population, level, samples, level_seed)?;
        let records: Vec<CustomerRecord> = drawn.into_iter().map(|s| s.record).collect();
        let cv = kfold_cv(&records, grid, regime, k, derive_seed(level_seed, u64::MAX))?;
        let l = level as f64;
        log::info!(
            "aggregation level {level}: train {:.6} test {:.6} (normalized)",
            cv.mean_train_apl / l,
            cv.mean_test_apl / l
        );
        rows.push(AggregationRow {
            level,
            samples,
            mean_train_apl: cv.mean_train_apl,
            mean_test_apl: cv.mean_test_apl,
            normalized_train_apl: cv.mean_train_apl / l,
            normalized_test_apl: cv.mean_test_apl / l,
        });
    }
    Ok(AggregationTable {
        constraint: regime,
        k,
        seed,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    pub level: usize,
    /// `[E40, E60]` of the individual ECs.
    pub band: (f64, f64),
    pub drawn: usize,
    pub retained: usize,
    pub achieved_apl: f64,
    pub params: QuantileParamSet,
}

/// Fits level-`level` data restricted to the individual `[E40, E60]` band.
/// Level 1 uses the individuals in the band; levels 2 and 3 draw `4|C|` and
/// `16|C|` aggregations and keep those inside the band.
pub fn band_restricted_fit(
    population: &ProfiledPopulation,
    level: usize,
    grid: &QuantileGrid,
    regime: Constraint,
    seed: u64,
) -> Result<BandFit> {
    let n = population.len();
    let lo = ec_percentile(population.records(), 40.0)?;
    let hi = ec_percentile(population.records(), 60.0)?;
    let candidates: Vec<CustomerRecord> = match level {
        1 => population.records().to_vec(),
        2 | 3 => {
            let count = n * if level == 2 { 4 } else { 16 };
            sample_aggregations(population, level, count, derive_seed(seed, level as u64))?
                .into_iter()
                .map(|s| s.record)
                .collect()
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "band-restricted fits support levels 1, 2 and 3, got {level}"
            )))
        }
    };
    let drawn = candidates.len();
    let kept: Vec<CustomerRecord> = candidates
        .into_iter()
        .filter(|r| r.energy >= lo && r.energy <= hi)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyFilteredBand {
            lo,
            hi,
            prefilter: drawn,
        });
    }
    let retained = kept.len();
    let result = fit(&FitProblem::new(kept, grid.clone(), regime)?)?;
    Ok(BandFit {
        level,
        band: (lo, hi),
        drawn,
        retained,
        achieved_apl: result.achieved_apl,
        params: result.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interval;

    fn pop(values: &[&[f64]]) -> ProfiledPopulation {
        ProfiledPopulation::from_profiles(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| LoadProfile::new(format!("c{i}"), v.to_vec(), Interval::QUARTER_HOUR).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn anti_correlated_profiles_do_not_coincide() {
        let p = pop(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = sample_aggregations(&p, 2, 3, 1).unwrap();
        for a in &s {
            assert_eq!(a.record.peak, 1.0);
            assert_eq!(a.record.energy, 2.0);
            assert_eq!(a.record.weight_level, 2);
            assert_eq!(a.members, vec!["c0", "c1"]);
        }
    }

    #[test]
    fn identical_profiles_coincide() {
        let p = pop(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let s = sample_aggregations(&p, 2, 1, 1).unwrap();
        assert_eq!(s[0].record.peak, 2.0);
    }

    #[test]
    fn level_one_reproduces_individuals() {
        let p = pop(&[&[1.0, 3.0], &[2.0, 0.5], &[0.2, 0.1]]);
        for s in sample_aggregations(&p, 1, 10, 5).unwrap() {
            let orig = p.records().iter().find(|r| r.customer_id == s.members[0]).unwrap();
            assert_eq!(&s.record, orig);
        }
    }

    #[test]
    fn level_above_population_is_an_error() {
        let p = pop(&[&[1.0], &[2.0]]);
        assert!(matches!(
            sample_aggregations(&p, 3, 1, 0),
            Err(Error::AggregationLevel {
                level: 3,
                population: 2
            })
        ));
    }

    #[test]
    fn mismatched_time_axes_are_rejected() {
        let a = LoadProfile::new("a", vec![1.0, 2.0], Interval::QUARTER_HOUR).unwrap();
        let b = LoadProfile::new("b", vec![1.0], Interval::QUARTER_HOUR).unwrap();
        assert!(ProfiledPopulation::from_profiles(vec![a, b]).is_err());
    }

    #[test]
    fn identical_customers_scale_exactly() {
        let profile: &[f64] = &[1.0, 4.0, 2.0, 3.0];
        let p = pop(&vec![profile; 30]);
        let grid = QuantileGrid::from_range(0.25, 0.75, 0.25).unwrap();
        let t = aggregation_cv(&p, &[2, 5, 10], &grid, Constraint::C4, 20, 5, 3).unwrap();
        let first = t.rows[0].normalized_test_apl;
        for r in &t.rows {
            assert!((r.normalized_test_apl - first).abs() < 1e-9, "{t:?}");
        }
    }
}
