//! Primal-dual interior-point method (Mehrotra predictor-corrector) for
//! linearly constrained quantile regression.
//!
//! Primal, with one residual split per row `r`:
//!
//! ```text
//! minimize   sum_r tau_r * u_r + (1 - tau_r) * v_r
//! subject to a_r' theta + u_r - v_r = y_r
//!            R theta - s = 0
//!            u, v, s >= 0,  theta free
//! ```
//!
//! Dual: maximize `y' lambda` subject to `X' lambda + R' mu = 0`,
//! `tau - 1 <= lambda <= tau`, `mu >= 0`.
//!
//! Each design row touches exactly two coefficients, so the normal matrix is
//! assembled in O(rows) and only a small dense `p x p` system is factored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::pinball;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Row {
    pub cols: [usize; 2],
    pub coef: [f64; 2],
    pub target: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct QrLp {
    pub n_params: usize,
    pub rows: Vec<Row>,
    /// Rows of `R` in `R theta >= 0`, as sparse `(column, coefficient)` lists.
    pub cone: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub rel_gap: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    /// Relative duality gap accepted when the method stalls.
    pub tolerance: f64,
    pub max_iter: usize,
}

const STEP_FRACTION: f64 = 0.9995;

struct Scaled {
    rows: Vec<Row>,
    cone: Vec<Vec<(usize, f64)>>,
    col_scale: Vec<f64>,
    y_scale: f64,
}

fn scale(lp: &QrLp) -> Scaled {
    let mut col_scale = vec![0.0f64; lp.n_params];
    for r in &lp.rows {
        for j in 0..2 {
            col_scale[r.cols[j]] = col_scale[r.cols[j]].max(r.coef[j].abs());
        }
    }
    for c in &mut col_scale {
        if *c == 0.0 || !c.is_finite() {
            *c = 1.0;
        }
    }
    let mean_abs = lp.rows.iter().map(|r| r.target.abs()).sum::<f64>() / lp.rows.len().max(1) as f64;
    let y_scale = if mean_abs > 0.0 && mean_abs.is_finite() {
        mean_abs
    } else {
        1.0
    };

    let rows = lp
        .rows
        .iter()
        .map(|r| Row {
            cols: r.cols,
            coef: [r.coef[0] / col_scale[r.cols[0]], r.coef[1] / col_scale[r.cols[1]]],
            target: r.target / y_scale,
            tau: r.tau,
        })
        .collect();
    let cone = lp
        .cone
        .iter()
        .map(|row| {
            let scaled: Vec<(usize, f64)> = row.iter().map(|&(j, c)| (j, c / col_scale[j])).collect();
            let norm = scaled.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
            scaled.into_iter().map(|(j, c)| (j, c / norm)).collect()
        })
        .collect();
    Scaled {
        rows,
        cone,
        col_scale,
        y_scale,
    }
}

#[inline]
fn row_dot(r: &Row, theta: &[f64]) -> f64 {
    r.coef[0] * theta[r.cols[0]] + r.coef[1] * theta[r.cols[1]]
}

#[inline]
fn sparse_dot(row: &[(usize, f64)], theta: &[f64]) -> f64 {
    row.iter().map(|&(j, c)| c * theta[j]).sum()
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

struct State {
    theta: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    zu: Vec<f64>,
    zv: Vec<f64>,
    mu: Vec<f64>,
}

struct Direction {
    theta: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    zu: Vec<f64>,
    zv: Vec<f64>,
    mu: Vec<f64>,
}

struct Residuals {
    primal: Vec<f64>,
    cone: Vec<f64>,
    dual: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

fn factor(p: usize, m: &[f64]) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = (0..p).map(|j| m[j * p + j]).fold(0.0f64, f64::max).max(1e-300);
    let mut reg = 1e-13 * max_diag;
    for _ in 0..8 {
        let mut mat = DMatrix::from_row_slice(p, p, m);
        for j in 0..p {
            mat[(j, j)] += reg;
        }
        if let Some(ch) = mat.cholesky() {
            return Ok(ch);
        }
        reg *= 100.0;
    }
    Err(Error::Internal("normal matrix is not positive definite".into()))
}

pub(crate) fn solve(lp: &QrLp, settings: IpmSettings) -> Result<LpSolution> {
    if lp.rows.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let sc = scale(lp);
    let p = lp.n_params;
    let n = sc.rows.len();
    let m = sc.cone.len();
    let rows = &sc.rows;
    let cone = &sc.cone;

    let cu: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let cv: Vec<f64> = rows.iter().map(|r| 1.0 - r.tau).collect();

    // Start from a lightly regularised least-squares fit.
    let theta = {
        let mut h = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for r in rows {
            for i in 0..2 {
                b[r.cols[i]] += r.coef[i] * r.target;
                for j in 0..2 {
                    h[r.cols[i] * p + r.cols[j]] += r.coef[i] * r.coef[j];
                }
            }
        }
        for j in 0..p {
            h[j * p + j] += 1e-8;
        }
        factor(p, &h)?.solve(&DVector::from_vec(b)).as_slice().to_vec()
    };
    let mut st = {
        let resid: Vec<f64> = rows.iter().map(|r| r.target - row_dot(r, &theta)).collect();
        let s: Vec<f64> = cone.iter().map(|row| sparse_dot(row, &theta).max(0.0) + 0.5).collect();
        State {
            u: resid.iter().map(|r| r.max(0.0) + 0.5).collect(),
            v: resid.iter().map(|r| (-r).max(0.0) + 0.5).collect(),
            lambda: rows.iter().map(|r| r.tau - 0.5).collect(),
            zu: vec![0.5; n],
            zv: vec![0.5; n],
            mu: vec![0.5; m],
            s,
            theta,
        }
    };

    let target_gap = settings.tolerance * 1e-3;
    let abs_floor = 1e-3 * n as f64;
    let mut last_gap = f64::INFINITY;
    let mut last_comp = f64::INFINITY;
    let mut stalled = 0;
    // Best feasible iterate; later iterates can degrade once the
    // complementarity reaches rounding noise.
    let mut best: Option<(f64, Vec<f64>)> = None;

    for iter in 1..=settings.max_iter {
        let res = residuals(rows, cone, &cu, &cv, &st, p);

        let direct: f64 = rows
            .iter()
            .map(|r| pinball(r.target - row_dot(r, &st.theta), r.tau))
            .sum();
        let dobj: f64 = rows.iter().zip(&st.lambda).map(|(r, l)| r.target * l).sum();
        let rel_gap = (direct - dobj).abs() / direct.abs().max(abs_floor);
        let dual_inf = res.dual.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let cone_inf = cone
            .iter()
            .map(|row| (-sparse_dot(row, &st.theta)).max(0.0))
            .fold(0.0f64, f64::max);

        let feasible = dual_inf <= 1e-9 * (1.0 + n as f64).sqrt() && cone_inf <= 1e-10;
        if feasible && rel_gap <= target_gap {
            return Ok(finish(&sc, st.theta, iter, rel_gap));
        }
        if feasible && best.as_ref().is_none_or(|(g, _)| rel_gap < *g) {
            best = Some((rel_gap, st.theta.clone()));
        }
        let complementarity = dot(&st.u, &st.zu) + dot(&st.v, &st.zv) + dot(&st.s, &st.mu);
        if rel_gap >= last_gap * 0.999 && complementarity >= last_comp * 0.999 {
            stalled += 1;
        } else {
            stalled = 0;
        }
        last_gap = last_gap.min(rel_gap);
        last_comp = last_comp.min(complementarity);
        let exhausted = complementarity <= 1e-15 * direct.abs().max(abs_floor);
        if exhausted || stalled >= 8 || iter == settings.max_iter {
            if let Some((gap, theta)) = best.filter(|(g, _)| *g <= settings.tolerance) {
                return Ok(finish(&sc, theta, iter, gap));
            }
            let primal_inf = res.primal.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            return Err(Error::NonConvergence {
                iterations: iter,
                gap: rel_gap,
                primal_residual: primal_inf.max(cone_inf),
                dual_residual: dual_inf,
            });
        }

        // Normal matrix.
        let d: Vec<f64> = (0..n).map(|r| st.u[r] / st.zu[r] + st.v[r] / st.zv[r]).collect();
        let w: Vec<f64> = (0..m).map(|j| st.mu[j] / st.s[j]).collect();
        let mut h = vec![0.0; p * p];
        for (r, row) in rows.iter().enumerate() {
            let inv = 1.0 / d[r];
            for i in 0..2 {
                for j in 0..2 {
                    h[row.cols[i] * p + row.cols[j]] += inv * row.coef[i] * row.coef[j];
                }
            }
        }
        for (j, crow) in cone.iter().enumerate() {
            for &(a, ca) in crow {
                for &(b, cb) in crow {
                    h[a * p + b] += w[j] * ca * cb;
                }
            }
        }
        let chol = factor(p, &h)?;

        let mu_avg = complementarity / (2 * n + m) as f64;

        // Predictor.
        let comp_u: Vec<f64> = (0..n).map(|r| -st.u[r] * st.zu[r]).collect();
        let comp_v: Vec<f64> = (0..n).map(|r| -st.v[r] * st.zv[r]).collect();
        let comp_s: Vec<f64> = (0..m).map(|j| -st.s[j] * st.mu[j]).collect();
        let aff = direction(rows, cone, &st, &res, &d, &w, &chol, &h, &comp_u, &comp_v, &comp_s, p);
        let (ap, ad) = step_lengths(&st, &aff);
        let mu_aff = {
            let mut acc = 0.0;
            for r in 0..n {
                acc += (st.u[r] + ap * aff.u[r]) * (st.zu[r] + ad * aff.zu[r]);
                acc += (st.v[r] + ap * aff.v[r]) * (st.zv[r] + ad * aff.zv[r]);
            }
            for j in 0..m {
                acc += (st.s[j] + ap * aff.s[j]) * (st.mu[j] + ad * aff.mu[j]);
            }
            acc / (2 * n + m) as f64
        };
        let sigma = (mu_aff / mu_avg).powi(3).min(1.0);

        // Corrector.
        let target = sigma * mu_avg;
        let comp_u: Vec<f64> = (0..n)
            .map(|r| target - st.u[r] * st.zu[r] - aff.u[r] * aff.zu[r])
            .collect();
        let comp_v: Vec<f64> = (0..n)
            .map(|r| target - st.v[r] * st.zv[r] - aff.v[r] * aff.zv[r])
            .collect();
        let comp_s: Vec<f64> = (0..m)
            .map(|j| target - st.s[j] * st.mu[j] - aff.s[j] * aff.mu[j])
            .collect();
        let dir = direction(rows, cone, &st, &res, &d, &w, &chol, &h, &comp_u, &comp_v, &comp_s, p);
        let (ap, ad) = step_lengths(&st, &dir);
        let ap = (STEP_FRACTION * ap).min(1.0);
        let ad = (STEP_FRACTION * ad).min(1.0);

        axpy(&mut st.theta, ap, &dir.theta);
        axpy(&mut st.u, ap, &dir.u);
        axpy(&mut st.v, ap, &dir.v);
        axpy(&mut st.s, ap, &dir.s);
        axpy(&mut st.lambda, ad, &dir.lambda);
        axpy(&mut st.zu, ad, &dir.zu);
        axpy(&mut st.zv, ad, &dir.zv);
        axpy(&mut st.mu, ad, &dir.mu);
    }
    unreachable!("loop returns on the last iteration")
}

fn finish(sc: &Scaled, theta: Vec<f64>, iterations: usize, rel_gap: f64) -> LpSolution {
    let theta = theta
        .iter()
        .zip(&sc.col_scale)
        .map(|(t, c)| t * sc.y_scale / c)
        .collect();
    LpSolution {
        theta,
        iterations,
        rel_gap,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &mut [f64], a: f64, d: &[f64]) {
    for (xi, di) in x.iter_mut().zip(d) {
        *xi += a * di;
    }
}

fn residuals(rows: &[Row], cone: &[Vec<(usize, f64)>], cu: &[f64], cv: &[f64], st: &State, p: usize) -> Residuals {
    let primal = rows
        .iter()
        .enumerate()
        .map(|(r, row)| row.target - row_dot(row, &st.theta) - st.u[r] + st.v[r])
        .collect();
    let cone_res = cone
        .iter()
        .enumerate()
        .map(|(j, row)| st.s[j] - sparse_dot(row, &st.theta))
        .collect();
    let mut dual = vec![0.0; p];
    for (row, l) in rows.iter().zip(&st.lambda) {
        dual[row.cols[0]] -= row.coef[0] * l;
        dual[row.cols[1]] -= row.coef[1] * l;
    }
    for (row, mu) in cone.iter().zip(&st.mu) {
        for &(j, c) in row {
            dual[j] -= c * mu;
        }
    }
    let upper = (0..rows.len()).map(|r| cu[r] - st.lambda[r] - st.zu[r]).collect();
    let lower = (0..rows.len()).map(|r| cv[r] + st.lambda[r] - st.zv[r]).collect();
    Residuals {
        primal,
        cone: cone_res,
        dual,
        upper,
        lower,
    }
}

#[allow(clippy::too_many_arguments)]
fn direction(
    rows: &[Row],
    cone: &[Vec<(usize, f64)>],
    st: &State,
    res: &Residuals,
    d: &[f64],
    w: &[f64],
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    h: &[f64],
    comp_u: &[f64],
    comp_v: &[f64],
    comp_s: &[f64],
    p: usize,
) -> Direction {
    let n = rows.len();
    let m = cone.len();
    let g: Vec<f64> = (0..n)
        .map(|r| (comp_u[r] - st.u[r] * res.upper[r]) / st.zu[r] - (comp_v[r] - st.v[r] * res.lower[r]) / st.zv[r])
        .collect();

    let mut rhs = vec![0.0; p];
    for (r, row) in rows.iter().enumerate() {
        let t = (res.primal[r] - g[r]) / d[r];
        rhs[row.cols[0]] += row.coef[0] * t;
        rhs[row.cols[1]] += row.coef[1] * t;
    }
    for (j, crow) in cone.iter().enumerate() {
        let t = w[j] * res.cone[j] + comp_s[j] / st.s[j];
        for &(a, c) in crow {
            rhs[a] += c * t;
        }
    }
    for (r, d) in rhs.iter_mut().zip(&res.dual) {
        *r -= d;
    }
    let dtheta = refined_solve(chol, h, &rhs, p);

    let mut dir = Direction {
        lambda: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        zu: Vec::with_capacity(n),
        zv: Vec::with_capacity(n),
        s: Vec::with_capacity(m),
        mu: Vec::with_capacity(m),
        theta: dtheta,
    };
    for (r, row) in rows.iter().enumerate() {
        let dl = (res.primal[r] - g[r] - row_dot(row, &dir.theta)) / d[r];
        dir.lambda.push(dl);
        dir.u
            .push((comp_u[r] - st.u[r] * res.upper[r]) / st.zu[r] + st.u[r] / st.zu[r] * dl);
        dir.v
            .push((comp_v[r] - st.v[r] * res.lower[r]) / st.zv[r] - st.v[r] / st.zv[r] * dl);
        dir.zu.push(res.upper[r] - dl);
        dir.zv.push(res.lower[r] + dl);
    }
    for (j, crow) in cone.iter().enumerate() {
        let dmu = w[j] * (res.cone[j] - sparse_dot(crow, &dir.theta)) + comp_s[j] / st.s[j];
        dir.mu.push(dmu);
        dir.s.push((comp_s[j] - st.s[j] * dmu) / st.mu[j]);
    }
    dir
}

/// Solves `H x = b` with the (regularised) factor of `H`, then refines
/// against the exact `H`; the normal matrix grows ill-conditioned as the
/// iterates approach a degenerate optimum.
fn refined_solve(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, h: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut x = chol.solve(&DVector::from_column_slice(b));
    for _ in 0..2 {
        let r: Vec<f64> = (0..p)
            .map(|i| b[i] - (0..p).map(|j| h[i * p + j] * x[j]).sum::<f64>())
            .collect();
        x += chol.solve(&DVector::from_vec(r));
    }
    x.as_slice().to_vec()
}

fn step_lengths(st: &State, dir: &Direction) -> (f64, f64) {
    let ap = max_step(&st.u, &dir.u)
        .min(max_step(&st.v, &dir.v))
        .min(max_step(&st.s, &dir.s));
    let ad = max_step(&st.zu, &dir.zu)
        .min(max_step(&st.zv, &dir.zv))
        .min(max_step(&st.mu, &dir.mu));
    (ap, ad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> IpmSettings {
        IpmSettings {
            tolerance: 1e-7,
            max_iter: 200,
        }
    }

    fn line_rows(points: &[(f64, f64)], tau: f64) -> Vec<Row> {
        points
            .iter()
            .map(|&(x, y)| Row {
                cols: [0, 1],
                coef: [1.0, x],
                target: y,
                tau,
            })
            .collect()
    }

    #[test]
    fn median_of_constants() {
        // Intercept-only median of {1, 2, 10}: 2. Second column duplicates the
        // first so that the design stays two-column.
        let rows: Vec<Row> = [1.0, 2.0, 10.0]
            .iter()
            .map(|&y| Row {
                cols: [0, 1],
                coef: [1.0, 0.0],
                target: y,
                tau: 0.5,
            })
            .collect();
        let sol = solve(
            &QrLp {
                n_params: 2,
                rows,
                cone: vec![],
            },
            settings(),
        )
        .unwrap();
        assert!((sol.theta[0] - 2.0).abs() < 1e-6, "{:?}", sol.theta);
    }

    #[test]
    fn exact_line_is_recovered() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.0 + 0.5 * i as f64)).collect();
        let sol = solve(
            &QrLp {
                n_params: 2,
                rows: line_rows(&pts, 0.3),
                cone: vec![],
            },
            settings(),
        )
        .unwrap();
        assert!((sol.theta[0] - 3.0).abs() < 1e-6);
        assert!((sol.theta[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn inequality_binds() {
        // The unconstrained slope is 0.5; R = [0, -1] forces slope <= 0.
        let pts: Vec<(f64, f64)> = (1..12).map(|i| (i as f64, 0.5 * i as f64)).collect();
        let sol = solve(
            &QrLp {
                n_params: 2,
                rows: line_rows(&pts, 0.5),
                cone: vec![vec![(1, -1.0)]],
            },
            settings(),
        )
        .unwrap();
        assert!(sol.theta[1] <= 1e-9);
        // With zero slope the median fit is the median of the targets, 3.0.
        assert!((sol.theta[0] - 3.0).abs() < 1e-5, "{:?}", sol.theta);
    }
}
