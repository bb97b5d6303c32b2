//! Compilation of non-crossing regimes into linear (in)equalities over the
//! coefficients. Only adjacent level pairs are emitted; transitivity covers
//! the rest. C2 is instantiated at the smallest and largest EC only: the
//! crossing condition is affine in `sqrt(x)`, so it holds in between.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Constraint, QuantileGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamRef {
    Alpha(usize),
    Beta(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `sum <= 0`
    LessEq,
    /// `sum == 0`
    Equal,
}

/// `sum(coef * param) {<=, ==} 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(ParamRef, f64)>,
    pub relation: Relation,
}

impl LinearConstraint {
    fn le(terms: Vec<(ParamRef, f64)>) -> Self {
        LinearConstraint {
            terms,
            relation: Relation::LessEq,
        }
    }

    fn eq(terms: Vec<(ParamRef, f64)>) -> Self {
        LinearConstraint {
            terms,
            relation: Relation::Equal,
        }
    }

    /// Left-hand side evaluated at the given coefficients.
    pub fn evaluate(&self, alphas: &[f64], betas: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(p, c)| match p {
                ParamRef::Alpha(k) => c * alphas[k],
                ParamRef::Beta(k) => c * betas[k],
            })
            .sum()
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (p, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            match p {
                ParamRef::Alpha(k) => write!(f, "{c}*alpha[{k}]")?,
                ParamRef::Beta(k) => write!(f, "{c}*beta[{k}]")?,
            }
        }
        match self.relation {
            Relation::LessEq => f.write_str(" <= 0"),
            Relation::Equal => f.write_str(" = 0"),
        }
    }
}

pub fn compile_constraints(
    grid: &QuantileGrid,
    regime: Constraint,
    ec_domain: &[f64],
) -> Result<Vec<LinearConstraint>> {
    use ParamRef::{Alpha, Beta};

    let pairs = grid.len().saturating_sub(1);
    let mut out = Vec::new();
    match regime {
        Constraint::C1 => {}
        Constraint::C2 => {
            if ec_domain.is_empty() {
                return Err(Error::InvalidInput("C2 needs a non-empty EC domain".into()));
            }
            if let Some(&x) = ec_domain.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::NegativeEc(x));
            }
            let lo = ec_domain.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ec_domain.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let roots: Vec<f64> = if lo == hi {
                vec![lo.sqrt()]
            } else {
                vec![lo.sqrt(), hi.sqrt()]
            };
            for k in 0..pairs {
                for &s in &roots {
                    out.push(LinearConstraint::le(vec![
                        (Alpha(k), s),
                        (Alpha(k + 1), -s),
                        (Beta(k), 1.0),
                        (Beta(k + 1), -1.0),
                    ]));
                }
            }
        }
        Constraint::C3 => {
            for k in 0..pairs {
                out.push(LinearConstraint::le(vec![(Alpha(k), 1.0), (Alpha(k + 1), -1.0)]));
                out.push(LinearConstraint::le(vec![(Beta(k), 1.0), (Beta(k + 1), -1.0)]));
            }
        }
        Constraint::C4 => {
            for k in 0..pairs {
                out.push(LinearConstraint::eq(vec![(Alpha(k), 1.0), (Alpha(k + 1), -1.0)]));
            }
            for k in 0..pairs {
                out.push(LinearConstraint::le(vec![(Beta(k), 1.0), (Beta(k + 1), -1.0)]));
            }
        }
    }
    Ok(out)
}
