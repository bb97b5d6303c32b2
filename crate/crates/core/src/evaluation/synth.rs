//! Synthetic data: moment-matched Gaussian baselines and generative
//! populations with a known quantile surface.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::error::{Error, Result};
use crate::model::{pairwise_sum, CustomerRecord, Interval, LoadProfile};

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = pairwise_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    (mu, pairwise_sum(&sq) / n)
}

fn gaussian_values<R: Rng>(rng: &mut R, mu: f64, sigma: f64, t: usize) -> Result<Vec<f64>> {
    let normal =
        Normal::new(mu, sigma).map_err(|e| Error::InvalidInput(format!("gaussian N({mu}, {sigma}^2): {e}")))?;
    Ok((0..t).map(|_| normal.sample(rng)).collect())
}

/// For each source profile, `T` i.i.d. draws from `N(mu, sigma^2)` where
/// `mu` and `sigma^2` are the profile's mean and population variance.
/// Negative draws are kept.
pub fn synth_gaussian_profiles(profiles: &[LoadProfile], seed: u64) -> Result<Vec<LoadProfile>> {
    profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.values.is_empty() || p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "profile {} is empty or has missing values",
                    p.customer_id
                )));
            }
            let (mu, var) = moments(&p.values);
            let mut rng = stream_rng(seed, i as u64);
            let values = gaussian_values(&mut rng, mu, var.sqrt(), p.len())?;
            LoadProfile::new(p.customer_id.clone(), values, p.interval)
        })
        .collect()
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo..hi)
}

/// Customers with `E` log-uniform over `ec_range` and
/// `P = alpha * E + B * sqrt(E)`, `B ~ U(b_range)`.
///
/// The true quantile surface is `alpha_tau = alpha`,
/// `beta_tau = b_lo + tau * (b_hi - b_lo)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelanderPopulation {
    pub customers: usize,
    pub ec_range: (f64, f64),
    pub alpha: f64,
    pub b_range: (f64, f64),
}

impl Default for VelanderPopulation {
    fn default() -> Self {
        VelanderPopulation {
            customers: 5000,
            ec_range: (1e3, 1e6),
            alpha: 0.1,
            b_range: (1.0, 3.0),
        }
    }
}

impl VelanderPopulation {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ec_range;
        if self.customers == 0 || !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "velander population needs customers > 0 and 0 < ec_lo <= ec_hi, got {self:?}"
            )));
        }
        let (b0, b1) = self.b_range;
        if !(b0 <= b1 && b0.is_finite() && b1.is_finite() && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid B range or alpha in {self:?}")));
        }
        Ok(())
    }

    pub fn true_alpha(&self) -> f64 {
        self.alpha
    }

    pub fn true_beta(&self, tau: f64) -> f64 {
        self.b_range.0 + tau * (self.b_range.1 - self.b_range.0)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let e = log_uniform(rng, self.ec_range);
        let b = uniform(rng, self.b_range);
        (e, self.alpha * e + b * e.sqrt())
    }

    pub fn records(&self, seed: u64) -> Result<Vec<CustomerRecord>> {
        self.validate()?;
        (0..self.customers)
            .into_par_iter()
            .map(|i| {
                let (e, p) = self.draw(&mut stream_rng(seed, i as u64));
                CustomerRecord::new(format!("v{i:06}"), e, p, 1)
            })
            .collect()
    }

    /// Profiles of `intervals` readings realising the same `(E, P)` draws as
    /// [`VelanderPopulation::records`]: one reading at the peak, the rest a
    /// random positive background carrying the remaining energy.
    pub fn profiles(&self, intervals: usize, interval: Interval, seed: u64) -> Result<Vec<LoadProfile>> {
        self.validate()?;
        if intervals < 2 {
            return Err(Error::InvalidInput("profiles need at least 2 intervals".into()));
        }
        (0..self.customers)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let (e, p) = self.draw(&mut rng);
                let id = format!("v{i:06}");
                let background = e / interval.energy_units() - p;
                let weights: Vec<f64> = (0..intervals - 1).map(|_| rng.random_range(0.5..1.5)).collect();
                let wsum = pairwise_sum(&weights);
                let spike = rng.random_range(0..intervals);
                let mut values = Vec::with_capacity(intervals);
                let mut w = weights.iter();
                for t in 0..intervals {
                    if t == spike {
                        values.push(p);
                    } else {
                        values.push(background * w.next().copied().unwrap_or(0.0) / wsum);
                    }
                }
                if background < 0.0 || values.iter().any(|&v| v > p) {
                    return Err(Error::InvalidInput(format!(
                        "customer {id}: E = {e} and P = {p} cannot be realised over {intervals} intervals"
                    )));
                }
                LoadProfile::new(id, values, interval)
            })
            .collect()
    }
}

/// Customers whose loads are i.i.d. Gaussian in time, with a per-customer
/// mean drawn log-uniformly from `mean_range` and a standard deviation drawn
/// uniformly from `std_range`, independently of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPopulation {
    pub customers: usize,
    pub intervals: usize,
    pub mean_range: (f64, f64),
    pub std_range: (f64, f64),
}

impl GaussianPopulation {
    pub fn profiles(&self, interval: Interval, seed: u64) -> Result<Vec<LoadProfile>> {
        let (m0, m1) = self.mean_range;
        let (s0, s1) = self.std_range;
        if self.customers == 0 || self.intervals == 0 || !(0.0 < m0 && m0 <= m1) || !(0.0 <= s0 && s0 <= s1) {
            return Err(Error::InvalidInput(format!("invalid gaussian population {self:?}")));
        }
        (0..self.customers)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let mu = log_uniform(&mut rng, self.mean_range);
                let sigma = uniform(&mut rng, self.std_range);
                let values = gaussian_values(&mut rng, mu, sigma, self.intervals)?;
                LoadProfile::new(format!("g{i:06}"), values, interval)
            })
            .collect()
    }
}
