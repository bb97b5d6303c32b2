//! Transfer losses: year-ahead (TLD) and between EC bands (SLD).

use std::fmt;

use serde::{Deserialize, Serialize};

use super::csv_f64;
use crate::error::{Error, Result};
use crate::ingest::ec_percentile;
use crate::model::{apl_unchecked, Constraint, CustomerRecord, QuantileGrid, QuantileParamSet};
use crate::solver::{fit, FitProblem};

/// `[E_lo, E_hi)` with `E_p` the p-th EC percentile; the band reaching the
/// 100th percentile includes its upper end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileBand {
    pub lo: f64,
    pub hi: f64,
}

impl PercentileBand {
    pub const fn new(lo: f64, hi: f64) -> Self {
        PercentileBand { lo, hi }
    }
}

impl fmt::Display for PercentileBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Small-from-large and large-from-small halves of a segment.
pub const DEFAULT_SLD_SPLITS: [(PercentileBand, PercentileBand); 2] = [
    (PercentileBand::new(0.0, 50.0), PercentileBand::new(50.0, 100.0)),
    (PercentileBand::new(50.0, 100.0), PercentileBand::new(0.0, 50.0)),
];

pub fn percentile_band(records: &[CustomerRecord], band: PercentileBand) -> Result<Vec<CustomerRecord>> {
    if !(band.lo < band.hi) {
        return Err(Error::InvalidInput(format!("band {band} has lo >= hi")));
    }
    let lo = ec_percentile(records, band.lo)?;
    let hi = ec_percentile(records, band.hi)?;
    let closed = band.hi >= 100.0;
    let selected: Vec<CustomerRecord> = records
        .iter()
        .filter(|r| r.energy >= lo && (r.energy < hi || (closed && r.energy <= hi)))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyBand {
            name: format!("C({band})"),
        });
    }
    Ok(selected)
}

fn loss_ratio(transferred: f64, optimal: f64) -> Result<f64> {
    if optimal == 0.0 {
        return Err(Error::ZeroOptimalLoss);
    }
    Ok(transferred / optimal - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TldReport {
    pub constraint: Constraint,
    pub records: usize,
    pub transferred_apl: f64,
    pub optimal_apl: f64,
    pub tld: f64,
}

impl TldReport {
    pub const CSV_HEADER: &'static str = "constraint,records,transferred_apl,optimal_apl,tld";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.constraint,
            self.records,
            csv_f64(self.transferred_apl),
            csv_f64(self.optimal_apl),
            csv_f64(self.tld)
        )
    }
}

/// Relative excess loss of last period's parameters on this period's records
/// over this period's own optimum.
pub fn tld(
    records_t2: &[CustomerRecord],
    grid: &QuantileGrid,
    regime: Constraint,
    theta_t1: &QuantileParamSet,
) -> Result<TldReport> {
    if theta_t1.grid != *grid || theta_t1.constraint != regime {
        return Err(Error::InvalidInput(format!(
            "previous-period parameters were fitted under {} on a {}-level grid, expected {} on {} levels",
            theta_t1.constraint,
            theta_t1.grid.len(),
            regime,
            grid.len()
        )));
    }
    let own = fit(&FitProblem::new(records_t2.to_vec(), grid.clone(), regime)?)?;
    let transferred_apl = apl_unchecked(records_t2, theta_t1);
    Ok(TldReport {
        constraint: regime,
        records: records_t2.len(),
        transferred_apl,
        optimal_apl: own.achieved_apl,
        tld: loss_ratio(transferred_apl, own.achieved_apl)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SldReport {
    pub constraint: Constraint,
    pub target: PercentileBand,
    pub source: PercentileBand,
    pub target_size: usize,
    pub source_size: usize,
    pub transferred_apl: f64,
    pub optimal_apl: f64,
    pub sld: f64,
}

impl SldReport {
    pub const CSV_HEADER: &'static str =
        "constraint,target,source,target_size,source_size,transferred_apl,optimal_apl,sld";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.constraint,
            self.target,
            self.source,
            self.target_size,
            self.source_size,
            csv_f64(self.transferred_apl),
            csv_f64(self.optimal_apl),
            csv_f64(self.sld)
        )
    }

    pub fn to_csv(reports: &[SldReport]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Relative excess loss on band `target` of parameters fitted on `source`.
pub fn sld(
    records: &[CustomerRecord],
    grid: &QuantileGrid,
    regime: Constraint,
    (target, source): (PercentileBand, PercentileBand),
) -> Result<SldReport> {
    let target_records = percentile_band(records, target)?;
    let source_records = percentile_band(records, source)?;
    let source_fit = fit(&FitProblem::new(source_records.clone(), grid.clone(), regime)?)?;
    let own = fit(&FitProblem::new(target_records.clone(), grid.clone(), regime)?)?;
    let transferred_apl = apl_unchecked(&target_records, &source_fit.params);
    Ok(SldReport {
        constraint: regime,
        target,
        source,
        target_size: target_records.len(),
        source_size: source_records.len(),
        transferred_apl,
        optimal_apl: own.achieved_apl,
        sld: loss_ratio(transferred_apl, own.achieved_apl)?,
    })
}

/// Both default splits: SLD(S|L) then SLD(L|S).
pub fn sld_default(records: &[CustomerRecord], grid: &QuantileGrid, regime: Constraint) -> Result<Vec<SldReport>> {
    DEFAULT_SLD_SPLITS
        .iter()
        .map(|&split| sld(records, grid, regime, split))
        .collect()
}
