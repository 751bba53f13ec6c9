use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stage::Stage;

use rand::Rng as _;

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!("pearson needs two equal series of length ≥ 2, got {} and {}", x.len(), y.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson correlation undefined for a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("spearman needs equal-length series"));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Rank correlation between depth index and stage ordinal, REM epochs excluded.
pub fn spearman_concordance(sdi: &[f64], stages: &[Stage]) -> Result<f64> {
    if sdi.len() != stages.len() {
        return Err(Error::shape(format!("{} values for {} stages", sdi.len(), stages.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = sdi
        .iter()
        .zip(stages)
        .filter(|(_, s)| !s.is_rem())
        .map(|(v, s)| (*v, s.code() as f64))
        .unzip();
    if x.len() < 3 {
        return Err(Error::invalid(format!("concordance needs ≥ 3 non-REM epochs, got {}", x.len())));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(Error::invalid("concordance undefined when every non-REM epoch has the same stage"));
    }
    spearman(&x, &y)
}

/// Mann–Whitney area under the ROC curve; ties count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n1 = labels.iter().filter(|l| **l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid("AUROC needs both classes"));
    }
    let r = ranks(scores);
    let rank_sum: f64 = r.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

/// Linear-interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Bootstrap replicate estimates, resampling units with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct Bootstrap {
    pub estimates: Vec<f64>,
    /// Replicates where the statistic was undefined (e.g. one class only).
    pub skipped: usize,
}

impl Bootstrap {
    /// Replicate `r` draws from its own stream of `seed`, so results do not
    /// depend on thread scheduling.
    pub fn run<F>(n_units: usize, replicates: usize, seed: u64, stat: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> Option<f64> + Sync + Send,
    {
        if n_units == 0 || replicates == 0 {
            return Err(Error::invalid("bootstrap needs units and replicates"));
        }
        let draws = crate::par::map_range(replicates, |r| {
            let mut g = rng::stream(seed, r as u64);
            let pick: Vec<usize> = (0..n_units).map(|_| g.random_range(0..n_units)).collect();
            stat(&pick).filter(|v| v.is_finite())
        });
        let skipped = draws.iter().filter(|d| d.is_none()).count();
        let estimates: Vec<f64> = draws.into_iter().flatten().collect();
        if estimates.is_empty() {
            return Err(Error::numeric("every bootstrap replicate was undefined"));
        }
        Ok(Bootstrap { estimates, skipped })
    }

    /// Percentile interval at `level` (e.g. 0.95).
    pub fn percentile(&self, level: f64) -> Interval {
        let mut s = self.estimates.clone();
        s.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        Interval { low: quantile_sorted(&s, a), high: quantile_sorted(&s, 1.0 - a) }
    }
}

/// Percentile bootstrap CI of the AUROC.
///
/// With `clusters`, whole clusters (subjects) are resampled; otherwise single
/// observations are.
pub fn auroc_bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    clusters: Option<&[usize]>,
    replicates: usize,
    seed: u64,
) -> Result<Interval> {
    auroc(scores, labels)?;
    let groups: Vec<Vec<usize>> = match clusters {
        Some(c) => {
            if c.len() != scores.len() {
                return Err(Error::shape("cluster ids differ in length from scores"));
            }
            let mut ids: Vec<usize> = c.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids.iter().map(|id| (0..c.len()).filter(|&i| c[i] == *id).collect()).collect()
        }
        None => (0..scores.len()).map(|i| vec![i]).collect(),
    };
    let bs = Bootstrap::run(groups.len(), replicates, seed, |pick| {
        let idx: Vec<usize> = pick.iter().flat_map(|&g| groups[g].iter().copied()).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        auroc(&s, &l).ok()
    })?;
    Ok(bs.percentile(0.95))
}
