//! Two-component Gaussian mixture over standardized biomarker vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const K: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    #[default]
    Full,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub covariance: Covariance,
    pub tol: f64,
    pub max_iter: usize,
    /// Added to every covariance diagonal in each M-step.
    pub ridge: f64,
    pub seed: u64,
    /// Feature whose (original-scale) component mean decides which component is "disturbed".
    pub rb_index: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig { covariance: Covariance::Full, tol: 1e-6, max_iter: 500, ridge: 1e-6, seed: 0, rb_index: 0 }
    }
}

/// Per-feature z-scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; zero-spread features get unit scale.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let s = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// Component means in standardized units.
    pub means: Vec<Vec<f64>>,
    /// Row-major d×d covariances in standardized units.
    pub covariances: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    /// Index of the component with the higher original-scale RB mean.
    pub disturbed_component: usize,
}

struct Component {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

fn component(mean: &[f64], cov: &[f64], d: usize) -> Result<Component> {
    let c = DMatrix::from_row_slice(d, d, cov);
    let chol = c.cholesky().ok_or_else(|| Error::numeric("mixture covariance is not positive definite"))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Component { mean: DVector::from_column_slice(mean), chol, log_det })
}

fn log_density(c: &Component, x: &DVector<f64>) -> f64 {
    let diff = x - &c.mean;
    let z = c.chol.l().solve_lower_triangular(&diff).expect("triangular solve");
    let d = x.len() as f64;
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + c.log_det + z.norm_squared())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-point log joint densities `log w_k + log N(x | k)`.
fn joint(weights: &[f64], comps: &[Component], x: &[DVector<f64>]) -> Vec<[f64; K]> {
    x.iter()
        .map(|xi| {
            let mut r = [0.0; K];
            for k in 0..K {
                r[k] = weights[k].ln() + log_density(&comps[k], xi);
            }
            r
        })
        .collect()
}

fn kmeans_pp(x: &[DVector<f64>], seed: u64) -> [usize; K] {
    let mut r = rng::seeded(seed);
    let first = r.random_range(0..x.len());
    let d2: Vec<f64> = x.iter().map(|xi| (xi - &x[first]).norm_squared()).collect();
    let total: f64 = d2.iter().sum();
    let mut u = r.random::<f64>() * total;
    let mut second = x.len() - 1;
    for (i, &w) in d2.iter().enumerate() {
        if u < w {
            second = i;
            break;
        }
        u -= w;
    }
    [first, second]
}

fn m_step(
    x: &[DVector<f64>],
    resp: &[[f64; K]],
    cfg: &GmmConfig,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = x.len();
    let d = x[0].len();
    let mut weights = Vec::with_capacity(K);
    let mut means = Vec::with_capacity(K);
    let mut covs = Vec::with_capacity(K);
    for k in 0..K {
        let nk: f64 = resp.iter().map(|r| r[k]).sum::<f64>().max(1e-12);
        let mut mu = DVector::zeros(d);
        for (xi, r) in x.iter().zip(resp) {
            mu += xi * r[k];
        }
        mu /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for (xi, r) in x.iter().zip(resp) {
            let diff = xi - &mu;
            cov += &diff * diff.transpose() * r[k];
        }
        cov /= nk;
        if cfg.covariance == Covariance::Diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        for j in 0..d {
            cov[(j, j)] += cfg.ridge;
        }
        weights.push(nk / n as f64);
        means.push(mu.iter().copied().collect());
        covs.push(cov.transpose().iter().copied().collect());
    }
    (weights, means, covs)
}

/// Fits the mixture by EM after z-scoring each feature.
pub fn fit_gmm(rows: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmModel> {
    if rows.len() < 10 {
        return Err(Error::invalid(format!("mixture fit needs at least 10 rows, got {}", rows.len())));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("mixture rows must be finite and of equal length"));
    }
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::invalid("all rows are identical; nothing to cluster"));
    }
    if cfg.rb_index >= d {
        return Err(Error::invalid("rb_index outside the feature vector"));
    }
    let st = Standardizer::fit(rows);
    let x: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(st.apply(r))).collect();

    let centers = kmeans_pp(&x, cfg.seed);
    let resp: Vec<[f64; K]> = x
        .iter()
        .map(|xi| {
            let a = (xi - &x[centers[0]]).norm_squared();
            let b = (xi - &x[centers[1]]).norm_squared();
            if a <= b { [1.0, 0.0] } else { [0.0, 1.0] }
        })
        .collect();
    let (mut weights, mut means, mut covs) = m_step(&x, &resp, cfg);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let comps: Vec<Component> =
            (0..K).map(|k| component(&means[k], &covs[k], d)).collect::<Result<_>>()?;
        let lj = joint(&weights, &comps, &x);
        let ll: f64 = lj.iter().map(|r| log_sum_exp(r)).sum();
        let resp: Vec<[f64; K]> = lj
            .iter()
            .map(|r| {
                let z = log_sum_exp(r);
                [(r[0] - z).exp(), (r[1] - z).exp()]
            })
            .collect();
        let done = trace.last().is_some_and(|prev: &f64| ll - prev < cfg.tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
        (weights, means, covs) = m_step(&x, &resp, cfg);
    }
    let rb_mean = |k: usize| st.invert(&means[k])[cfg.rb_index];
    let disturbed_component = if rb_mean(1) > rb_mean(0) { 1 } else { 0 };
    Ok(GmmModel {
        weights,
        means,
        covariances: covs,
        standardizer: st,
        log_likelihood_trace: trace,
        converged,
        disturbed_component,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtype {
    Normal,
    Disturbed,
}

impl Subtype {
    pub fn label(self) -> &'static str {
        match self {
            Subtype::Normal => "normal",
            Subtype::Disturbed => "disturbed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Posterior per component index.
    pub posterior: [f64; K],
    pub posterior_disturbed: f64,
    pub label: Subtype,
}

pub fn assign_subtypes(model: &GmmModel, rows: &[Vec<f64>]) -> Result<Vec<Assignment>> {
    let d = model.standardizer.mean.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape(format!("rows must have {d} features")));
    }
    let comps: Vec<Component> =
        (0..K).map(|k| component(&model.means[k], &model.covariances[k], d)).collect::<Result<_>>()?;
    let x: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(model.standardizer.apply(r))).collect();
    Ok(joint(&model.weights, &comps, &x)
        .iter()
        .map(|r| {
            let z = log_sum_exp(r);
            let posterior = [(r[0] - z).exp(), (r[1] - z).exp()];
            let pd = posterior[model.disturbed_component];
            let hard = if posterior[1] > posterior[0] { 1 } else { 0 };
            let label = if hard == model.disturbed_component { Subtype::Disturbed } else { Subtype::Normal };
            Assignment { posterior, posterior_disturbed: pd, label }
        })
        .collect())
}

/// Replaces missing cells with the column median of the present ones.
pub fn impute_median(rows: &[Vec<Option<f64>>]) -> Result<Vec<Vec<f64>>> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut medians = Vec::with_capacity(d);
    for j in 0..d {
        let mut present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        if present.is_empty() {
            return Err(Error::invalid(format!("feature column {j} has no values to impute from")));
        }
        present.sort_by(f64::total_cmp);
        medians.push(crate::stats::quantile_sorted(&present, 0.5));
    }
    Ok(rows.iter().map(|r| r.iter().enumerate().map(|(j, v)| v.unwrap_or(medians[j])).collect()).collect())
}

/// `recording_id,posterior_disturbed,label`.
pub fn assignments_csv(ids: &[String], a: &[Assignment]) -> String {
    let mut s = String::from("recording_id,posterior_disturbed,label\n");
    for (id, x) in ids.iter().zip(a) {
        s.push_str(&format!("{id},{},{}\n", x.posterior_disturbed, x.label.label()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_round_trip() {
        let rows = vec![vec![1.0, 10.0], vec![2.0, 30.0], vec![4.0, 20.0]];
        let s = Standardizer::fit(&rows);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_small_or_identical() {
        let rows = vec![vec![1.0, 2.0]; 12];
        assert!(fit_gmm(&rows, &GmmConfig::default()).is_err());
        assert!(fit_gmm(&rows[..5], &GmmConfig::default()).is_err());
    }

    #[test]
    fn duplicates_survive_via_ridge() {
        let mut rows = vec![vec![0.0, 0.0]; 10];
        rows.extend(vec![vec![1.0, 1.0]; 10]);
        let m = fit_gmm(&rows, &GmmConfig::default()).unwrap();
        let a = assign_subtypes(&m, &rows).unwrap();
        assert_ne!(a[0].label, a[15].label);
        for x in &a {
            assert!((x.posterior[0] + x.posterior[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn median_imputation() {
        let rows = vec![vec![Some(1.0), None], vec![Some(2.0), Some(4.0)], vec![Some(3.0), Some(6.0)]];
        assert_eq!(impute_median(&rows).unwrap(), vec![vec![1.0, 5.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
    }
}
