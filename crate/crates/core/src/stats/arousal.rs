//! Binned relation between depth decreases and arousal burden.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::rank::{mean, pearson, variance, Interval};
use crate::error::{Error, Result};

/// What to do with negative decreases (depth rising).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    #[default]
    Exclude,
    /// Treat them as zero.
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub n: usize,
    /// Mean decrease of the members; `None` when empty.
    pub mean_decrease: Option<f64>,
    pub mean_arousal: Option<f64>,
    /// Two-sided 95% t-interval of the mean arousal proportion (needs n ≥ 2).
    pub ci: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCorrelation {
    pub n_bins: usize,
    pub n_pairs: usize,
    pub bins: Vec<Bin>,
    pub empty_bins: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    /// Pearson r over nonempty bin means.
    pub pearson_r: f64,
}

impl BinnedCorrelation {
    /// `bin,low,high,n,mean_decrease,mean_arousal,ci_low,ci_high`; empty cells for missing values.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("bin,low,high,n,mean_decrease,mean_arousal,ci_low,ci_high\n");
        for (i, b) in self.bins.iter().enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{},{},{}\n",
                b.low,
                b.high,
                b.n,
                opt(b.mean_decrease),
                opt(b.mean_arousal),
                opt(b.ci.map(|c| c.low)),
                opt(b.ci.map(|c| c.high))
            ));
        }
        s
    }
}

/// Pairs decrease `d[k]` (the drop into epoch `k + 1`) with the arousal
/// proportion of epoch `k + 1 + offset`; pairs running past the night are dropped.
pub fn pair_with_arousal(decreases: &[f64], arousal: &[f64], offset: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if arousal.len() != decreases.len() + 1 {
        return Err(Error::shape(format!(
            "{} decreases need {} arousal values, got {}",
            decreases.len(),
            decreases.len() + 1,
            arousal.len()
        )));
    }
    Ok(decreases
        .iter()
        .enumerate()
        .filter_map(|(k, &d)| arousal.get(k + 1 + offset).map(|&a| (d, a)))
        .unzip())
}

/// Bins decreases into `n_bins` equal intervals over [0, 1] and relates the
/// per-bin mean decrease to the per-bin mean arousal proportion.
pub fn decile_arousal_analysis(
    decreases: &[f64],
    arousal: &[f64],
    n_bins: usize,
    negative: NegativePolicy,
) -> Result<BinnedCorrelation> {
    if decreases.len() != arousal.len() {
        return Err(Error::shape(format!("{} decreases for {} arousal values", decreases.len(), arousal.len())));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_bins];
    let mut n_pairs = 0;
    for (&d, &a) in decreases.iter().zip(arousal) {
        let d = match (d < 0.0, negative) {
            (true, NegativePolicy::Exclude) => continue,
            (true, NegativePolicy::Clamp) => 0.0,
            _ => d.min(1.0),
        };
        let b = ((d * n_bins as f64).floor() as usize).min(n_bins - 1);
        members[b].push((d, a));
        n_pairs += 1;
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut empty = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, m) in members.iter().enumerate() {
        let low = i as f64 / n_bins as f64;
        let high = (i + 1) as f64 / n_bins as f64;
        if m.is_empty() {
            empty.push(i);
            bins.push(Bin { low, high, n: 0, mean_decrease: None, mean_arousal: None, ci: None });
            continue;
        }
        let ds: Vec<f64> = m.iter().map(|p| p.0).collect();
        let as_: Vec<f64> = m.iter().map(|p| p.1).collect();
        let (md, ma) = (mean(&ds), mean(&as_));
        let ci = (m.len() >= 2).then(|| {
            let se = (variance(&as_) / m.len() as f64).sqrt();
            let t = StudentsT::new(0.0, 1.0, (m.len() - 1) as f64).expect("positive df").inverse_cdf(0.975);
            Interval { low: ma - t * se, high: ma + t * se }
        });
        xs.push(md);
        ys.push(ma);
        bins.push(Bin { low, high, n: m.len(), mean_decrease: Some(md), mean_arousal: Some(ma), ci });
    }
    if xs.len() < 2 {
        return Err(Error::invalid(format!("only {} nonempty bins; need at least 2", xs.len())));
    }
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let pearson_r = pearson(&xs, &ys)?;
    Ok(BinnedCorrelation { n_bins, n_pairs, bins, empty_bins: empty, slope, intercept, pearson_r })
}
