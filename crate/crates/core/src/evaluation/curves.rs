//! Point sets for plotting fitted QR curves and truncated CDFs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::csv_f64;
use crate::error::{Error, Result};
use crate::model::QuantileParamSet;

/// Samples per QR curve across the EC band.
pub const CURVE_POINTS: usize = 101;
pub const DEFAULT_CURVE_TAUS: [f64; 3] = [0.2, 0.5, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// `x` = EC, `y` = predicted peak load at level `tau`.
    Curve,
    /// `x` = predicted peak load at EC `E`, `y` = `tau`.
    Cdf,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Curve => "curve",
            CurveKind::Cdf => "cdf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub level: usize,
    pub kind: CurveKind,
    pub tau: f64,
    pub energy: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub rows: Vec<CurveRow>,
    /// `(requested, used)` levels where a curve level was not on the grid.
    pub substitutions: Vec<(f64, f64)>,
}

impl CurveExport {
    pub const CSV_HEADER: &'static str = "level,kind,tau,E,x,y";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.level,
                r.kind,
                csv_f64(r.tau),
                csv_f64(r.energy),
                csv_f64(r.x),
                csv_f64(r.y)
            ));
        }
        out
    }

    /// CDF points of one (aggregation level, EC) pair, in grid order.
    pub fn cdf(&self, level: usize, energy: f64) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.kind == CurveKind::Cdf && r.level == level && r.energy == energy)
            .map(|r| (r.x, r.y))
            .collect()
    }

    /// QR curve samples of one (aggregation level, tau) pair.
    pub fn curve(&self, level: usize, tau: f64) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.kind == CurveKind::Curve && r.level == level && r.tau == tau)
            .map(|r| (r.x, r.y))
            .collect()
    }
}

/// QR curves at `curve_taus` sampled on `CURVE_POINTS` ECs spanning
/// `ec_points`, and the truncated CDF `{(alpha_tau E + beta_tau sqrt(E), tau)}`
/// at each of `ec_points`, for every aggregation level.
pub fn export_curves(
    params_by_level: &BTreeMap<usize, QuantileParamSet>,
    ec_points: &[f64],
    curve_taus: &[f64],
) -> Result<CurveExport> {
    let grid = &params_by_level
        .values()
        .next()
        .ok_or_else(|| Error::InvalidInput("no parameter sets to export".into()))?
        .grid;
    if params_by_level.values().any(|p| p.grid != *grid) {
        return Err(Error::InvalidInput(
            "parameter sets do not share a quantile grid".into(),
        ));
    }
    if ec_points.is_empty() || ec_points.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "EC points must be non-negative, got {ec_points:?}"
        )));
    }

    let mut substitutions = Vec::new();
    let mut curve_levels = Vec::with_capacity(curve_taus.len());
    for &tau in curve_taus {
        let k = grid.nearest(tau);
        let used = grid.levels()[k];
        if (used - tau).abs() > 1e-9 {
            log::warn!("curve level {tau} is not on the grid, using {used}");
            substitutions.push((tau, used));
        }
        curve_levels.push(k);
    }

    let lo = ec_points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ec_points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = if lo == hi {
        vec![lo]
    } else {
        (0..CURVE_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64)
            .collect()
    };

    let mut rows = Vec::new();
    for (&level, params) in params_by_level {
        for &k in &curve_levels {
            let tau = grid.levels()[k];
            rows.extend(xs.iter().map(|&x| CurveRow {
                level,
                kind: CurveKind::Curve,
                tau,
                energy: x,
                x,
                y: params.predict(k, x),
            }));
        }
        for &e in ec_points {
            rows.extend(grid.levels().iter().enumerate().map(|(k, &tau)| CurveRow {
                level,
                kind: CurveKind::Cdf,
                tau,
                energy: e,
                x: params.predict(k, e),
                y: tau,
            }));
        }
    }
    Ok(CurveExport { rows, substitutions })
}
