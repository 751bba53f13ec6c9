use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Product-limit survival curve; `survival[k]` holds on `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

impl KaplanMeier {
    /// S(t), right-continuous; 1 before the first event time.
    pub fn at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(k) => self.survival[k],
            None => 1.0,
        }
    }
}

fn check(time: &[f64], event: &[bool]) -> Result<()> {
    if time.len() != event.len() {
        return Err(Error::shape("times and event flags differ in length"));
    }
    if time.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("survival times must be positive"));
    }
    Ok(())
}

/// Distinct event times in increasing order with (deaths, at risk).
fn event_table(time: &[f64], event: &[bool], mask: impl Fn(usize) -> bool) -> Vec<(f64, usize, usize)> {
    let mut ts: Vec<f64> = (0..time.len()).filter(|&i| event[i] && mask(i)).map(|i| time[i]).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let d = (0..time.len()).filter(|&i| mask(i) && event[i] && time[i] == t).count();
            let r = (0..time.len()).filter(|&i| mask(i) && time[i] >= t).count();
            (t, d, r)
        })
        .collect()
}

pub fn km_estimate(time: &[f64], event: &[bool]) -> Result<KaplanMeier> {
    check(time, event)?;
    let mut s = 1.0;
    let mut times = Vec::new();
    let mut survival = Vec::new();
    for (t, d, r) in event_table(time, event, |_| true) {
        s *= 1.0 - d as f64 / r as f64;
        times.push(t);
        survival.push(s);
    }
    Ok(KaplanMeier { times, survival })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub statistic: f64,
    pub p: f64,
    pub observed_group1: f64,
    pub expected_group1: f64,
}

/// Two-group log-rank test; `group` true marks group 1.
pub fn logrank(time: &[f64], event: &[bool], group: &[bool]) -> Result<LogRank> {
    check(time, event)?;
    if group.len() != time.len() {
        return Err(Error::shape("group flags differ in length from times"));
    }
    if !event.iter().any(|e| *e) {
        return Err(Error::invalid("log-rank test needs at least one event"));
    }
    let (mut o1, mut e1, mut v) = (0.0, 0.0, 0.0);
    for (t, d, n) in event_table(time, event, |_| true) {
        let n1 = (0..time.len()).filter(|&i| group[i] && time[i] >= t).count() as f64;
        let d1 = (0..time.len()).filter(|&i| group[i] && event[i] && time[i] == t).count() as f64;
        let (n, d) = (n as f64, d as f64);
        o1 += d1;
        e1 += d * n1 / n;
        if n > 1.0 {
            v += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    if v == 0.0 {
        return Err(Error::invalid("log-rank variance is zero; groups do not overlap in the risk sets"));
    }
    let stat = (o1 - e1).powi(2) / v;
    let p = 1.0 - ChiSquared::new(1.0).expect("1 df").cdf(stat);
    Ok(LogRank { statistic: stat, p, observed_group1: o1, expected_group1: e1 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub hazard_ratio: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

struct CoxData {
    /// Row-major covariates, centred.
    x: Vec<Vec<f64>>,
    /// Indices grouped by tied time, longest time first.
    groups: Vec<Vec<usize>>,
    event: Vec<bool>,
    ties: Ties,
}

impl CoxData {
    /// Partial log-likelihood, gradient and Hessian at `beta`.
    fn eval(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let mut ll = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for g in &self.groups {
            let mut d0 = 0.0;
            let mut d1 = DVector::zeros(p);
            let mut d2 = DMatrix::zeros(p, p);
            let mut deaths = 0usize;
            for &i in g {
                let xi = DVector::from_column_slice(&self.x[i]);
                let eta = beta.dot(&xi);
                let w = eta.exp();
                let xx = &xi * xi.transpose();
                s0 += w;
                s1 += &xi * w;
                s2 += &xx * w;
                if self.event[i] {
                    deaths += 1;
                    ll += eta;
                    grad += &xi;
                    d0 += w;
                    d1 += &xi * w;
                    d2 += &xx * w;
                }
            }
            for l in 0..deaths {
                let f = match self.ties {
                    Ties::Breslow => 0.0,
                    Ties::Efron => l as f64 / deaths as f64,
                };
                let a0 = s0 - f * d0;
                let a1 = &s1 - &d1 * f;
                let a2 = &s2 - &d2 * f;
                ll -= a0.ln();
                grad -= &a1 / a0;
                hess -= &a2 / a0 - (&a1 * a1.transpose()) / (a0 * a0);
            }
        }
        (ll, grad, hess)
    }
}

/// Cox proportional hazards by Newton's method with step halving.
///
/// `covariates` are columns. Returns an error if the likelihood is monotone
/// (estimates diverge) or the information matrix is singular.
pub fn cox_ph(time: &[f64], event: &[bool], covariates: &[Vec<f64>], ties: Ties) -> Result<CoxFit> {
    check(time, event)?;
    let n = time.len();
    let p = covariates.len();
    if p == 0 || covariates.iter().any(|c| c.len() != n) {
        return Err(Error::shape("cox_ph needs covariate columns matching the times"));
    }
    let mut event_times: Vec<f64> = (0..n).filter(|&i| event[i]).map(|i| time[i]).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.len() < 2 {
        return Err(Error::invalid("cox_ph needs at least two distinct event times"));
    }
    let means: Vec<f64> = covariates.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| covariates[j][i] - means[j]).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if time[g[0]] == time[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let data = CoxData { x, groups, event: event.to_vec(), ties };

    let mut beta = DVector::zeros(p);
    let (mut ll, mut grad, mut hess) = data.eval(&beta);
    for it in 0..100 {
        let gnorm = grad.norm();
        if gnorm < 1e-8 {
            let info = -&hess;
            let cov = info.try_inverse().ok_or_else(|| Error::numeric("singular Cox information matrix"))?;
            let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
            let b: Vec<f64> = beta.iter().copied().collect();
            return Ok(CoxFit {
                hazard_ratio: b.iter().map(|v| v.exp()).collect(),
                ci_low: b.iter().zip(&se).map(|(v, s)| (v - 1.959_963_984_540_054 * s).exp()).collect(),
                ci_high: b.iter().zip(&se).map(|(v, s)| (v + 1.959_963_984_540_054 * s).exp()).collect(),
                beta: b,
                se,
                log_likelihood: ll,
                gradient_norm: gnorm,
                iterations: it,
            });
        }
        let info = -&hess;
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| info.lu().solve(&grad))
            .ok_or_else(|| Error::numeric("singular Cox information matrix"))?;
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let (cl, cg, ch) = data.eval(&cand);
            if cl.is_finite() && cl >= ll - 1e-12 * ll.abs() {
                beta = cand;
                (ll, grad, hess) = (cl, cg, ch);
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::numeric("Cox line search failed"));
            }
        }
        if beta.iter().any(|b| b.abs() > 50.0) {
            return Err(Error::numeric("monotone partial likelihood: Cox estimate diverges"));
        }
    }
    Err(Error::numeric("Cox regression did not converge"))
}

/// Partial log-likelihood at a given `beta` (for oracle checks).
pub fn cox_log_likelihood(time: &[f64], event: &[bool], covariates: &[Vec<f64>], beta: &[f64], ties: Ties) -> Result<f64> {
    check(time, event)?;
    let n = time.len();
    let p = covariates.len();
    let x: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| covariates[j][i]).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if time[g[0]] == time[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let data = CoxData { x, groups, event: event.to_vec(), ties };
    Ok(data.eval(&DVector::from_column_slice(beta)).0)
}
