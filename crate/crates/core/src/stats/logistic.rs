use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rank::{Bootstrap, Interval};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// Coefficients this large mean fitted probabilities are saturating.
const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per design column.
    pub coef: Vec<f64>,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

fn log_likelihood(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log σ(e) = -log(1 + e^{-e})
            let z = if yi { e } else { -e };
            -((-z.abs()).exp().ln_1p() + (-z).max(0.0))
        })
        .sum()
}

/// Maximum-likelihood logistic regression with an intercept, by Newton's method.
///
/// `columns` are the predictors. Fails on a singular design and on complete or
/// quasi-complete separation, where the estimate does not exist.
pub fn fit_logistic(y: &[bool], columns: &[Vec<f64>]) -> Result<LogisticFit> {
    let n = y.len();
    let p = columns.len() + 1;
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::shape("design columns differ in length from the outcome"));
    }
    if n <= p {
        return Err(Error::invalid(format!("{n} observations for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let yv = DVector::from_iterator(n, y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&x, y, &beta);
    for it in 0..MAX_ITER {
        let mu = (&x * &beta).map(sigmoid);
        let grad = x.transpose() * (&yv - &mu);
        let gnorm = grad.norm();
        if gnorm < GRAD_TOL {
            return Ok(LogisticFit { coef: beta.iter().copied().collect(), log_likelihood: ll, gradient_norm: gnorm, iterations: it });
        }
        let w = mu.map(|m| m * (1.0 - m));
        let mut info = x.transpose() * DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
        // symmetrise against rounding
        info = (&info + info.transpose()) * 0.5;
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| info.lu().solve(&grad))
            .ok_or_else(|| Error::numeric("singular logistic design"))?;
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut next_ll = log_likelihood(&x, y, &next);
        while next_ll < ll - 1e-12 * ll.abs() && t > 1e-10 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = log_likelihood(&x, y, &next);
        }
        beta = next;
        ll = next_ll;
        if beta.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
            return Err(Error::numeric("complete separation: logistic estimate does not exist"));
        }
    }
    Err(Error::numeric(format!("logistic regression did not converge in {MAX_ITER} iterations")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub odds_ratio: f64,
    pub coef: f64,
    pub ci: Option<Interval>,
    pub n: usize,
    pub bootstrap_skipped: usize,
}

/// Odds ratio of `group` on `outcome`, adjusted for `covariates`, with an
/// optional percentile bootstrap CI over subjects.
pub fn logistic_or(
    outcome: &[bool],
    group: &[bool],
    covariates: &[Vec<f64>],
    bootstrap: Option<(usize, u64)>,
) -> Result<OddsRatio> {
    let design = |idx: Option<&[usize]>| -> (Vec<bool>, Vec<Vec<f64>>) {
        let pick = |i: usize| idx.map_or(i, |ix| ix[i]);
        let n = idx.map_or(outcome.len(), |ix| ix.len());
        let y = (0..n).map(|i| outcome[pick(i)]).collect();
        let mut cols = vec![(0..n).map(|i| if group[pick(i)] { 1.0 } else { 0.0 }).collect::<Vec<_>>()];
        for c in covariates {
            cols.push((0..n).map(|i| c[pick(i)]).collect());
        }
        (y, cols)
    };
    if group.len() != outcome.len() {
        return Err(Error::shape("group and outcome differ in length"));
    }
    let (y, cols) = design(None);
    let fit = fit_logistic(&y, &cols)?;
    let coef = fit.coef[1];
    let (ci, skipped) = match bootstrap {
        Some((b, seed)) => {
            let bs = Bootstrap::run(outcome.len(), b, seed, |ix| {
                let (y, cols) = design(Some(ix));
                fit_logistic(&y, &cols).ok().map(|f| f.coef[1].exp())
            })?;
            (Some(bs.percentile(0.95)), bs.skipped)
        }
        None => (None, 0),
    };
    Ok(OddsRatio { odds_ratio: coef.exp(), coef, ci, n: outcome.len(), bootstrap_skipped: skipped })
}

/// One-hot columns for category codes, dropping `reference`.
pub fn one_hot(codes: &[u8], reference: u8) -> Vec<Vec<f64>> {
    let mut levels: Vec<u8> = codes.iter().copied().filter(|&c| c != reference).collect();
    levels.sort_unstable();
    levels.dedup();
    levels
        .into_iter()
        .map(|l| codes.iter().map(|&c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Expands a 2×2 table `[[a, b], [c, d]]` (rows exposed yes/no, columns outcome yes/no).
    fn expand(t: [[usize; 2]; 2]) -> (Vec<bool>, Vec<bool>) {
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (r, exposed) in [(0, true), (1, false)] {
            for (c, out) in [(0, true), (1, false)] {
                for _ in 0..t[r][c] {
                    y.push(out);
                    g.push(exposed);
                }
            }
        }
        (y, g)
    }

    #[test]
    fn cross_product_ratio() {
        let (y, g) = expand([[10, 20], [40, 30]]);
        let r = logistic_or(&y, &g, &[], None).unwrap();
        assert!((r.odds_ratio - 0.375).abs() < 1e-6);
    }

    #[test]
    fn separation_detected() {
        let y = vec![false, false, false, true, true, true];
        let x = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]];
        assert!(fit_logistic(&y, &x).is_err());
    }

    #[test]
    fn singular_design() {
        let y = vec![false, true, false, true, true];
        let c = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(fit_logistic(&y, &[c.clone(), c]).is_err());
    }

    #[test]
    fn one_hot_levels() {
        assert_eq!(one_hot(&[0, 2, 1, 2], 0), vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]);
    }
}
