//! Multiple quantile regression of the Velander formula under the C1-C4
//! non-crossing regimes.
//!
//! The problem is an exact LP (see [`ipm`]). C1 decomposes into one small
//! regression per level, solved in parallel; C2-C4 are solved jointly. C4 is
//! parameterised directly as `(alpha, beta_1, ..., beta_K)` so its equality
//! constraints never reach the solver.

mod constraints;
mod ipm;
mod oracle;

use rayon::prelude::*;

pub use constraints::{compile_constraints, LinearConstraint, ParamRef, Relation};
pub use oracle::{verify_optimality, OracleReport, Verdict, DEFAULT_ORACLE_BUDGET};

use crate::error::{Error, Result};
use crate::model::{apl_unchecked, Constraint, CustomerRecord, QuantileGrid, QuantileParamSet};
use ipm::{IpmSettings, QrLp, Row};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub records: Vec<CustomerRecord>,
    pub grid: QuantileGrid,
    pub constraint: Constraint,
    /// Relative optimality gap.
    pub tolerance: f64,
    /// ECs at which C2 must hold.
    pub ec_domain: Vec<f64>,
    /// Weight of an L2 penalty on successive `beta` differences. Only `0.0`
    /// (no penalty) is implemented.
    pub beta_smoothing: f64,
}

impl FitProblem {
    pub fn new(records: Vec<CustomerRecord>, grid: QuantileGrid, constraint: Constraint) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyRecords);
        }
        for r in &records {
            if !r.energy.is_finite() || r.energy < 0.0 {
                return Err(Error::NegativeEc(r.energy));
            }
            if r.energy == 0.0 {
                return Err(Error::ZeroEnergy(r.customer_id.clone()));
            }
            if !r.peak.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "customer {} has a non-finite peak",
                    r.customer_id
                )));
            }
        }
        let ec_domain = records.iter().map(|r| r.energy).collect();
        Ok(FitProblem {
            records,
            grid,
            constraint,
            tolerance: DEFAULT_TOLERANCE,
            ec_domain,
            beta_smoothing: 0.0,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance < 1.0) {
            return Err(Error::InvalidInput(format!("tolerance {tolerance} outside (0, 1)")));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn ec_range(&self) -> (f64, f64) {
        let lo = self.ec_domain.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.ec_domain.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn parameter_count(&self) -> usize {
        self.constraint.parameter_count(self.grid.len())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: QuantileParamSet,
    /// APL on the training records, kW.
    pub achieved_apl: f64,
    /// Interior-point iterations, summed over subproblems.
    pub iterations: usize,
    /// Largest relative duality gap at termination.
    pub relative_gap: f64,
    pub parameter_count: usize,
}

/// Column layout of the coefficient vector handed to the LP.
#[derive(Debug, Clone, Copy)]
struct Layout {
    constraint: Constraint,
    levels: usize,
}

impl Layout {
    fn n_params(self) -> usize {
        self.constraint.parameter_count(self.levels)
    }

    fn col(self, p: ParamRef) -> usize {
        match (self.constraint, p) {
            (Constraint::C4, ParamRef::Alpha(_)) => 0,
            (Constraint::C4, ParamRef::Beta(k)) => 1 + k,
            (_, ParamRef::Alpha(k)) => 2 * k,
            (_, ParamRef::Beta(k)) => 2 * k + 1,
        }
    }

    fn expand(self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (0..self.levels)
            .map(|k| (theta[self.col(ParamRef::Alpha(k))], theta[self.col(ParamRef::Beta(k))]))
            .unzip()
    }
}

fn build_lp(problem: &FitProblem, layout: Layout, levels: &[f64]) -> Result<QrLp> {
    let mut rows = Vec::with_capacity(problem.records.len() * levels.len());
    for (k, &tau) in levels.iter().enumerate() {
        let cols = [layout.col(ParamRef::Alpha(k)), layout.col(ParamRef::Beta(k))];
        for r in &problem.records {
            rows.push(Row {
                cols,
                coef: [r.energy, r.energy.sqrt()],
                target: r.peak,
                tau,
            });
        }
    }
    let grid = QuantileGrid::new(levels.to_vec())?;
    let mut cone = Vec::new();
    for c in compile_constraints(&grid, layout.constraint, &problem.ec_domain)? {
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(c.terms.len());
        for &(p, coef) in &c.terms {
            let col = layout.col(p);
            match terms.iter_mut().find(|(j, _)| *j == col) {
                Some(t) => t.1 += coef,
                None => terms.push((col, coef)),
            }
        }
        terms.retain(|(_, c)| *c != 0.0);
        if terms.is_empty() {
            continue;
        }
        match c.relation {
            // sum <= 0  <=>  -sum >= 0
            Relation::LessEq => cone.push(terms.into_iter().map(|(j, c)| (j, -c)).collect()),
            Relation::Equal => {
                return Err(Error::Internal(format!("equality {c} survived reparameterisation")));
            }
        }
    }
    Ok(QrLp {
        n_params: layout.n_params(),
        rows,
        cone,
    })
}

fn check_solvable(problem: &FitProblem) -> Result<()> {
    if problem.beta_smoothing != 0.0 {
        return Err(Error::Unsupported("beta smoothing penalty".into()));
    }
    if problem.records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(())
}

fn settings(problem: &FitProblem) -> IpmSettings {
    IpmSettings {
        tolerance: problem.tolerance,
        max_iter: MAX_ITERATIONS,
    }
}

/// Fits the quantile Velander formula by minimising the APL under the
/// problem's regime.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    check_solvable(problem)?;
    if problem.constraint != Constraint::C1 {
        return fit_joint(problem);
    }
    let levels = problem.grid.levels();
    let layout = Layout {
        constraint: Constraint::C1,
        levels: 1,
    };
    let solutions: Vec<_> = levels
        .par_iter()
        .map(|&tau| {
            let lp = build_lp(problem, layout, &[tau])?;
            ipm::solve(&lp, settings(problem))
        })
        .collect::<Result<_>>()?;
    let alphas = solutions.iter().map(|s| s.theta[0]).collect();
    let betas = solutions.iter().map(|s| s.theta[1]).collect();
    let iterations = solutions.iter().map(|s| s.iterations).sum();
    let gap = solutions.iter().map(|s| s.rel_gap).fold(0.0, f64::max);
    finish(problem, alphas, betas, iterations, gap)
}

/// Solves all levels as a single LP, without exploiting the C1 decomposition.
pub fn fit_joint(problem: &FitProblem) -> Result<FitResult> {
    check_solvable(problem)?;
    let layout = Layout {
        constraint: problem.constraint,
        levels: problem.grid.len(),
    };
    let lp = build_lp(problem, layout, problem.grid.levels())?;
    let sol = ipm::solve(&lp, settings(problem))?;
    let (alphas, betas) = layout.expand(&sol.theta);
    finish(problem, alphas, betas, sol.iterations, sol.rel_gap)
}

fn finish(
    problem: &FitProblem,
    mut alphas: Vec<f64>,
    mut betas: Vec<f64>,
    iterations: usize,
    gap: f64,
) -> Result<FitResult> {
    let (lo, hi) = problem.ec_range();
    enforce_regime(problem.constraint, &mut alphas, &mut betas, lo, hi);
    let params = QuantileParamSet::new(problem.grid.clone(), alphas, betas, problem.constraint, (lo, hi))?;
    let achieved_apl = apl_unchecked(&problem.records, &params);
    Ok(FitResult {
        params,
        achieved_apl,
        iterations,
        relative_gap: gap,
        parameter_count: problem.parameter_count(),
    })
}

/// Removes the residual constraint violations an interior-point solution
/// carries (of the order of the solver tolerance), so that the returned
/// coefficients satisfy the regime exactly in floating point.
fn enforce_regime(constraint: Constraint, alphas: &mut [f64], betas: &mut [f64], ec_lo: f64, ec_hi: f64) {
    let levels = alphas.len();
    match constraint {
        Constraint::C1 => {}
        Constraint::C3 => {
            for k in 1..levels {
                alphas[k] = alphas[k].max(alphas[k - 1]);
                betas[k] = betas[k].max(betas[k - 1]);
            }
        }
        Constraint::C4 => {
            for k in 1..levels {
                alphas[k] = alphas[0];
                betas[k] = betas[k].max(betas[k - 1]);
            }
        }
        Constraint::C2 => {
            let (s_lo, s_hi) = (ec_lo.sqrt(), ec_hi.sqrt());
            for k in 0..levels.saturating_sub(1) {
                let da = alphas[k + 1] - alphas[k];
                let db = betas[k + 1] - betas[k];
                let at_lo = da * s_lo + db;
                let at_hi = da * s_hi + db;
                if at_lo >= 0.0 && at_hi >= 0.0 {
                    continue;
                }
                let (want_lo, want_hi) = (at_lo.max(0.0), at_hi.max(0.0));
                let (new_da, new_db) = if s_hi > s_lo {
                    let slope = (want_hi - want_lo) / (s_hi - s_lo);
                    (slope, want_lo - slope * s_lo)
                } else {
                    (da, db + (want_lo - at_lo))
                };
                // Shift every higher level so that their mutual differences are kept.
                let (shift_a, shift_b) = (new_da - da, new_db - db);
                for j in k + 1..levels {
                    alphas[j] += shift_a;
                    betas[j] += shift_b;
                }
            }
        }
    }
}
