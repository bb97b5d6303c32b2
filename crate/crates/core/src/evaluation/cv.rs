use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_f64, stream_rng};
use crate::error::{Error, Result};
use crate::model::{apl_unchecked, Constraint, CustomerRecord, QuantileGrid};
use crate::solver::{fit, FitProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_apl: f64,
    pub test_apl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub constraint: Constraint,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_train_apl: f64,
    pub mean_test_apl: f64,
}

impl CvReport {
    pub const CSV_HEADER: &'static str = "fold,train_size,test_size,train_apl,test_apl";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per fold followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.fold,
                f.train_size,
                f.test_size,
                csv_f64(f.train_apl),
                csv_f64(f.test_apl)
            ));
        }
        out.push_str(&format!(
            "mean,,,{},{}\n",
            csv_f64(self.mean_train_apl),
            csv_f64(self.mean_test_apl)
        ));
        out
    }
}

/// Sizes of `k` contiguous folds over `n` items; the first `n % k` folds get
/// one extra item.
pub fn fold_sizes(n: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::FoldCount { k, n });
    }
    Ok((0..k).map(|i| n / k + usize::from(i < n % k)).collect())
}

pub fn kfold_cv(
    records: &[CustomerRecord],
    grid: &QuantileGrid,
    regime: Constraint,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    let sizes = fold_sizes(records.len(), k)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));

    let mut bounds = Vec::with_capacity(k);
    let mut start = 0;
    for s in sizes {
        bounds.push((start, start + s));
        start += s;
    }

    let folds = bounds
        .par_iter()
        .enumerate()
        .map(|(fold, &(lo, hi))| -> Result<FoldResult> {
            let test: Vec<CustomerRecord> = order[lo..hi].iter().map(|&i| records[i].clone()).collect();
            let train: Vec<CustomerRecord> = order[..lo]
                .iter()
                .chain(&order[hi..])
                .map(|&i| records[i].clone())
                .collect();
            let result = fit(&FitProblem::new(train, grid.clone(), regime)?)?;
            Ok(FoldResult {
                fold,
                train_size: order.len() - (hi - lo),
                test_size: hi - lo,
                train_apl: result.achieved_apl,
                test_apl: apl_unchecked(&test, &result.params),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_train_apl = folds.iter().map(|f| f.train_apl).sum::<f64>() / k as f64;
    let mean_test_apl = folds.iter().map(|f| f.test_apl).sum::<f64>() / k as f64;
    Ok(CvReport {
        constraint: regime,
        k,
        seed,
        folds,
        mean_train_apl,
        mean_test_apl,
    })
}
