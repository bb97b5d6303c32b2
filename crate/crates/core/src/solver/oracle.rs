//! Exhaustive optimality check for small fitting problems.
//!
//! The APL is piecewise linear on the cells of the hyperplane arrangement
//! formed by the zero-residual hyperplanes `alpha_k E_i + beta_k sqrt(E_i) = P_i`
//! and the boundaries of the feasible region. A linear function bounded below
//! on a pointed polyhedron attains its minimum at a vertex, so enumerating
//! every intersection of `p` independent hyperplanes and keeping the best
//! feasible one yields the global optimum. When the arrangement has no
//! vertex (all ECs equal, a single record), the coordinate hyperplanes are
//! added to make every cell pointed.
//!
//! Feasibility here uses the literal regime definitions over every level
//! pair and, for C2, every training EC, not the compiled constraint list the
//! solver uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{apl_unchecked, pinball, Constraint, QuantileParamSet};

use super::FitProblem;

pub const DEFAULT_ORACLE_BUDGET: u64 = 5_000_000;
const MAX_RECORDS: usize = 10;
const MAX_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// No feasible point improves the candidate by more than the tolerance.
    Optimal,
    /// A feasible point with a materially lower APL exists.
    Improvable,
    /// The candidate itself violates the regime.
    Infeasible,
    /// The enumeration would exceed the evaluation budget.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub verdict: Verdict,
    /// APL of the candidate, kW.
    pub candidate_apl: f64,
    /// Best APL found by enumeration, kW. `NaN` when inconclusive.
    pub best_apl: f64,
    /// `candidate_apl - best_apl`, kW.
    pub gap: f64,
    /// `gap / candidate_apl` (0 when both are 0).
    pub relative_gap: f64,
    /// Vertices evaluated.
    pub evaluations: u64,
    /// Best coefficients found, `(alphas, betas)`.
    pub best: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn verify_optimality(
    problem: &FitProblem,
    candidate: &QuantileParamSet,
    oracle_budget: u64,
) -> Result<OracleReport> {
    let n = problem.records.len();
    let levels = problem.grid.levels();
    if n > MAX_RECORDS || levels.len() > MAX_LEVELS {
        return Err(Error::InvalidInput(format!(
            "oracle handles at most {MAX_RECORDS} records and {MAX_LEVELS} levels, got {n} and {}",
            levels.len()
        )));
    }
    if candidate.grid != problem.grid {
        return Err(Error::InvalidInput(
            "candidate grid differs from the problem grid".into(),
        ));
    }
    let candidate_apl = apl_unchecked(&problem.records, candidate);
    let peak_scale = problem.records.iter().map(|r| r.peak.abs()).fold(1e-12, f64::max);

    let feasible_tol = 1e-9;
    if violation(problem, &candidate.alphas, &candidate.betas) > feasible_tol * peak_scale {
        return Ok(OracleReport {
            verdict: Verdict::Infeasible,
            candidate_apl,
            best_apl: f64::NAN,
            gap: f64::NAN,
            relative_gap: f64::NAN,
            evaluations: 0,
            best: None,
        });
    }

    let search = match problem.constraint {
        Constraint::C1 => search_separable(problem, oracle_budget),
        _ => search_joint(problem, oracle_budget, feasible_tol * peak_scale),
    };
    let Some((best_total, alphas, betas, evaluations)) = search else {
        return Ok(OracleReport {
            verdict: Verdict::Inconclusive,
            candidate_apl,
            best_apl: f64::NAN,
            gap: f64::NAN,
            relative_gap: f64::NAN,
            evaluations: 0,
            best: None,
        });
    };
    let best_apl = best_total / (n * levels.len()) as f64;
    let gap = candidate_apl - best_apl;
    let relative_gap = if candidate_apl > 0.0 { gap / candidate_apl } else { 0.0 };
    let threshold = problem.tolerance * best_apl.abs() + 1e-12 * peak_scale;
    let verdict = if gap <= threshold {
        Verdict::Optimal
    } else {
        Verdict::Improvable
    };
    Ok(OracleReport {
        verdict,
        candidate_apl,
        best_apl,
        gap,
        relative_gap,
        evaluations,
        best: Some((alphas, betas)),
    })
}

/// Largest violation of the regime, in kW for C2 and coefficient units otherwise.
fn violation(problem: &FitProblem, alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    let mut worst = 0.0f64;
    for lo in 0..k {
        for hi in lo + 1..k {
            match problem.constraint {
                Constraint::C1 => {}
                Constraint::C2 => {
                    for &x in &problem.ec_domain {
                        let f_lo = alphas[lo] * x + betas[lo] * x.sqrt();
                        let f_hi = alphas[hi] * x + betas[hi] * x.sqrt();
                        worst = worst.max(f_lo - f_hi);
                    }
                }
                Constraint::C3 => {
                    worst = worst.max(alphas[lo] - alphas[hi]).max(betas[lo] - betas[hi]);
                }
                Constraint::C4 => {
                    worst = worst.max((alphas[lo] - alphas[hi]).abs()).max(betas[lo] - betas[hi]);
                }
            }
        }
    }
    worst
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(u64::MAX as u128) as u64
}

/// Solves the square system `a x = b` (row-major `p x p`) in place by
/// Gaussian elimination with partial pivoting. `None` if singular.
fn solve_square(a: &mut [f64], b: &mut [f64], p: usize) -> Option<Vec<f64>> {
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i * p + col].abs().total_cmp(&a[j * p + col].abs()))?;
        if a[pivot * p + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..p {
                a.swap(pivot * p + j, col * p + j);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..p {
            let f = a[row * p + col] / a[col * p + col];
            if f != 0.0 {
                for j in col..p {
                    a[row * p + j] -= f * a[col * p + j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; p];
    for row in (0..p).rev() {
        let mut acc = b[row];
        for j in row + 1..p {
            acc -= a[row * p + j] * x[j];
        }
        x[row] = acc / a[row * p + row];
    }
    Some(x)
}

fn rank(rows: &[Vec<f64>], p: usize) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let mut r = 0;
    for col in 0..p {
        let Some(pivot) = (r..m.len()).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())) else {
            break;
        };
        if m[pivot][col].abs() < 1e-11 {
            continue;
        }
        m.swap(r, pivot);
        let (upper, lower) = m.split_at_mut(r + 1);
        let pivot_row = &upper[r];
        for row in lower {
            let f = row[col] / pivot_row[col];
            for (x, &y) in row[col..p].iter_mut().zip(&pivot_row[col..p]) {
                *x -= f * y;
            }
        }
        r += 1;
    }
    r
}

/// Hyperplane `normal . x = offset` in column-scaled coordinates.
#[derive(Clone)]
struct Plane {
    normal: Vec<f64>,
    offset: f64,
}

/// Enumerates every vertex of the arrangement, calling `objective` with the
/// vertex coordinates. Returns the best `(value, point)` and the number of
/// vertices evaluated, or `None` if the budget is too small.
fn enumerate_vertices(
    all_planes: Vec<Plane>,
    p: usize,
    budget: u64,
    mut objective: impl FnMut(&[f64]) -> Option<f64>,
) -> Option<(f64, Vec<f64>, u64)> {
    let mut planes: Vec<Plane> = Vec::with_capacity(all_planes.len());
    for plane in all_planes {
        if !planes
            .iter()
            .any(|q| q.normal == plane.normal && q.offset == plane.offset)
        {
            planes.push(plane);
        }
    }
    let normals: Vec<Vec<f64>> = planes.iter().map(|pl| pl.normal.clone()).collect();
    if rank(&normals, p) < p {
        for j in 0..p {
            let mut normal = vec![0.0; p];
            normal[j] = 1.0;
            planes.push(Plane { normal, offset: 0.0 });
        }
    }
    let h = planes.len();
    if binomial(h, p) > budget {
        return None;
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluations = 0u64;
    let mut idx: Vec<usize> = (0..p).collect();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    loop {
        for (r, &i) in idx.iter().enumerate() {
            a[r * p..(r + 1) * p].copy_from_slice(&planes[i].normal);
            b[r] = planes[i].offset;
        }
        if let Some(x) = solve_square(&mut a, &mut b, p) {
            evaluations += 1;
            if let Some(value) = objective(&x) {
                if best.as_ref().is_none_or(|(v, _)| value < *v) {
                    best = Some((value, x));
                }
            }
        }
        // Next combination in lexicographic order.
        let mut i = p;
        loop {
            if i == 0 {
                let (v, x) = best?;
                return Some((v, x, evaluations));
            }
            i -= 1;
            if idx[i] < h - p + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

type SearchOutcome = Option<(f64, Vec<f64>, Vec<f64>, u64)>;

/// C1: each level is an independent two-coefficient problem.
fn search_separable(problem: &FitProblem, budget: u64) -> SearchOutcome {
    let records = &problem.records;
    let e_scale = records.iter().map(|r| r.energy).fold(0.0, f64::max);
    let s_scale = e_scale.sqrt();
    let mut total = 0.0;
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut evaluations = 0;
    let per_level_budget = budget / problem.grid.len() as u64;
    for &tau in problem.grid.levels() {
        let planes = records
            .iter()
            .map(|r| Plane {
                normal: vec![r.energy / e_scale, r.energy.sqrt() / s_scale],
                offset: r.peak,
            })
            .collect();
        let (value, x, evals) = enumerate_vertices(planes, 2, per_level_budget, |x| {
            let (a, b) = (x[0] / e_scale, x[1] / s_scale);
            Some(
                records
                    .iter()
                    .map(|r| pinball(r.peak - a * r.energy - b * r.energy.sqrt(), tau))
                    .sum(),
            )
        })?;
        total += value;
        alphas.push(x[0] / e_scale);
        betas.push(x[1] / s_scale);
        evaluations += evals;
    }
    Some((total, alphas, betas, evaluations))
}

fn search_joint(problem: &FitProblem, budget: u64, feasible_tol: f64) -> SearchOutcome {
    let records = &problem.records;
    let levels = problem.grid.levels();
    let k = levels.len();
    let shared_alpha = problem.constraint == Constraint::C4;
    let p = if shared_alpha { k + 1 } else { 2 * k };
    let alpha_col = |level: usize| if shared_alpha { 0 } else { 2 * level };
    let beta_col = |level: usize| {
        if shared_alpha {
            1 + level
        } else {
            2 * level + 1
        }
    };

    let e_scale = records.iter().map(|r| r.energy).fold(0.0, f64::max);
    let s_scale = e_scale.sqrt();
    let mut col_scale = vec![1.0; p];
    for level in 0..k {
        col_scale[alpha_col(level)] = e_scale;
        col_scale[beta_col(level)] = s_scale;
    }

    let mut planes = Vec::new();
    for level in 0..k {
        for r in records {
            let mut normal = vec![0.0; p];
            normal[alpha_col(level)] = r.energy / e_scale;
            normal[beta_col(level)] = r.energy.sqrt() / s_scale;
            planes.push(Plane { normal, offset: r.peak });
        }
    }
    let mut boundary = |terms: &[(usize, f64)]| {
        let mut normal = vec![0.0; p];
        for &(col, c) in terms {
            normal[col] += c / col_scale[col];
        }
        if normal.iter().any(|v| *v != 0.0) {
            planes.push(Plane { normal, offset: 0.0 });
        }
    };
    for level in 0..k.saturating_sub(1) {
        let (lo, hi) = (level, level + 1);
        match problem.constraint {
            Constraint::C1 => {}
            Constraint::C2 => {
                let mut roots: Vec<f64> = problem.ec_domain.iter().map(|x| x.sqrt()).collect();
                roots.sort_by(f64::total_cmp);
                roots.dedup();
                for s in roots {
                    boundary(&[
                        (alpha_col(lo), s),
                        (alpha_col(hi), -s),
                        (beta_col(lo), 1.0),
                        (beta_col(hi), -1.0),
                    ]);
                }
            }
            Constraint::C3 => {
                boundary(&[(alpha_col(lo), 1.0), (alpha_col(hi), -1.0)]);
                boundary(&[(beta_col(lo), 1.0), (beta_col(hi), -1.0)]);
            }
            Constraint::C4 => boundary(&[(beta_col(lo), 1.0), (beta_col(hi), -1.0)]),
        }
    }

    let expand = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (0..k)
            .map(|level| {
                (
                    x[alpha_col(level)] / col_scale[alpha_col(level)],
                    x[beta_col(level)] / col_scale[beta_col(level)],
                )
            })
            .unzip()
    };
    let (value, x, evaluations) = enumerate_vertices(planes, p, budget, |x| {
        let (alphas, betas) = expand(x);
        if violation(problem, &alphas, &betas) > feasible_tol {
            return None;
        }
        let mut total = 0.0;
        for (level, &tau) in levels.iter().enumerate() {
            for r in records {
                total += pinball(r.peak - alphas[level] * r.energy - betas[level] * r.energy.sqrt(), tau);
            }
        }
        Some(total)
    })?;
    let (alphas, betas) = expand(&x);
    Some((value, alphas, betas, evaluations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CustomerRecord, QuantileGrid};
    use crate::solver::fit;

    fn rec(energy: f64, peak: f64) -> CustomerRecord {
        CustomerRecord::new("c", energy, peak, 1).unwrap()
    }

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(22, 6), 74613);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn fitted_two_point_problem_has_no_gap() {
        let p = FitProblem::new(
            vec![rec(1.0, 2.0), rec(4.0, 6.0)],
            QuantileGrid::new(vec![0.5]).unwrap(),
            Constraint::C1,
        )
        .unwrap();
        let fitted = fit(&p).unwrap();
        let report = verify_optimality(&p, &fitted.params, DEFAULT_ORACLE_BUDGET).unwrap();
        assert_eq!(report.verdict, Verdict::Optimal);
        assert!(report.gap <= 1e-6, "{report:?}");
    }

    #[test]
    fn perturbed_beta_is_improvable() {
        let p = FitProblem::new(
            vec![rec(1.0, 2.0), rec(4.0, 6.0), rec(9.0, 11.0)],
            QuantileGrid::new(vec![0.3, 0.6]).unwrap(),
            Constraint::C3,
        )
        .unwrap();
        let mut params = fit(&p).unwrap().params;
        params.betas[1] *= 1.1;
        let report = verify_optimality(&p, &params, DEFAULT_ORACLE_BUDGET).unwrap();
        assert_eq!(report.verdict, Verdict::Improvable);
        assert!(report.gap > 0.0);
    }

    #[test]
    fn exact_single_record_has_zero_gap() {
        let p = FitProblem::new(
            vec![rec(4.0, 10.0)],
            QuantileGrid::new(vec![0.5]).unwrap(),
            Constraint::C1,
        )
        .unwrap();
        let params = QuantileParamSet::new(p.grid.clone(), vec![2.0], vec![1.0], Constraint::C1, (4.0, 4.0)).unwrap();
        let report = verify_optimality(&p, &params, DEFAULT_ORACLE_BUDGET).unwrap();
        assert_eq!(report.verdict, Verdict::Optimal);
        assert_eq!(report.gap, 0.0);
        assert_eq!(report.best_apl, 0.0);
    }

    #[test]
    fn infeasible_candidate_is_flagged() {
        let p = FitProblem::new(
            vec![rec(1.0, 2.0), rec(4.0, 6.0)],
            QuantileGrid::new(vec![0.3, 0.6]).unwrap(),
            Constraint::C4,
        )
        .unwrap();
        let params = QuantileParamSet::new(
            p.grid.clone(),
            vec![1.0, 1.5],
            vec![1.0, 1.0],
            Constraint::C4,
            (1.0, 4.0),
        )
        .unwrap();
        let report = verify_optimality(&p, &params, DEFAULT_ORACLE_BUDGET).unwrap();
        assert_eq!(report.verdict, Verdict::Infeasible);
    }

    #[test]
    fn tiny_budget_is_inconclusive() {
        let p = FitProblem::new(
            (1..=6).map(|i| rec(i as f64, i as f64 + 1.0)).collect(),
            QuantileGrid::new(vec![0.2, 0.5, 0.8]).unwrap(),
            Constraint::C3,
        )
        .unwrap();
        let params = fit(&p).unwrap().params;
        let report = verify_optimality(&p, &params, 10).unwrap();
        assert_eq!(report.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn oversized_problem_is_rejected() {
        let p = FitProblem::new(
            (1..=11).map(|i| rec(i as f64, 1.0)).collect(),
            QuantileGrid::new(vec![0.5]).unwrap(),
            Constraint::C1,
        )
        .unwrap();
        let params = QuantileParamSet::new(p.grid.clone(), vec![0.0], vec![0.0], Constraint::C1, (1.0, 11.0)).unwrap();
        assert!(verify_optimality(&p, &params, DEFAULT_ORACLE_BUDGET).is_err());
    }
}
