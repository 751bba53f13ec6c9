//! Per-night summaries of the depth-index curve.

use serde::{Deserialize, Serialize};

use crate::annotator::SdiNight;
use crate::error::{Error, Result};
use crate::stage::Stage;

/// Depth index below which an epoch counts as shallow.
pub const SHALLOW_THRESHOLD: f64 = 0.2;

fn nonempty(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("empty depth series"));
    }
    Ok(())
}

/// Fraction of epochs with depth below `threshold`.
pub fn rb(sdi: &[f64], threshold: f64) -> Result<f64> {
    nonempty(sdi)?;
    Ok(sdi.iter().filter(|&&v| v < threshold).count() as f64 / sdi.len() as f64)
}

/// Sum of depth over all epochs divided by the number of sleep epochs.
pub fn ap(sdi: &[f64], tst_epochs: usize) -> Result<f64> {
    nonempty(sdi)?;
    if tst_epochs == 0 {
        return Err(Error::invalid("area proportion undefined without sleep epochs"));
    }
    Ok(sdi.iter().sum::<f64>() / tst_epochs as f64)
}

/// Sample standard deviation over mean.
pub fn cv(sdi: &[f64]) -> Result<f64> {
    if sdi.len() < 3 {
        return Err(Error::invalid("coefficient of variation needs at least 3 values"));
    }
    let m = crate::stats::mean(sdi);
    if m <= 0.0 {
        return Err(Error::invalid("coefficient of variation undefined for non-positive mean"));
    }
    Ok(crate::stats::variance(sdi).sqrt() / m)
}

/// Adjusted Fisher–Pearson skewness; `None` for a constant series.
pub fn skewness(x: &[f64]) -> Result<Option<f64>> {
    if x.len() < 3 {
        return Err(Error::invalid("skewness needs at least 3 values"));
    }
    let n = x.len() as f64;
    let m = crate::stats::mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Ok(None);
    }
    Ok(Some((n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5)))
}

/// Mean depth over REM epochs; `None` without any.
pub fn mdr(sdi: &[f64], rem: &[bool]) -> Result<Option<f64>> {
    if sdi.len() != rem.len() {
        return Err(Error::shape("REM mask differs in length from the depth series"));
    }
    let vals: Vec<f64> = sdi.iter().zip(rem).filter(|(_, r)| **r).map(|(v, _)| *v).collect();
    Ok((!vals.is_empty()).then(|| crate::stats::mean(&vals)))
}

/// REM epochs over sleep epochs.
pub fn pr(rem: &[bool], tst_epochs: usize) -> Result<f64> {
    if tst_epochs == 0 {
        return Err(Error::invalid("REM proportion undefined without sleep epochs"));
    }
    Ok(rem.iter().filter(|r| **r).count() as f64 / tst_epochs as f64)
}

fn population_std(x: &[f64]) -> f64 {
    let m = crate::stats::mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn chebyshev_close(x: &[f64], i: usize, j: usize, m: usize, r: f64) -> bool {
    (0..m).all(|k| (x[i + k] - x[j + k]).abs() <= r)
}

/// Approximate entropy with template length `m` and tolerance `r_factor`·σ
/// (population σ); self-matches included.
pub fn apen(x: &[f64], m: usize, r_factor: f64) -> Result<f64> {
    if x.len() < 16 {
        return Err(Error::invalid("approximate entropy needs at least 16 values"));
    }
    let r = r_factor * population_std(x);
    if r == 0.0 {
        return Ok(0.0);
    }
    let phi = |m: usize| {
        let count = x.len() - m + 1;
        let total: f64 = (0..count)
            .map(|i| {
                let c = (0..count).filter(|&j| chebyshev_close(x, i, j, m, r)).count();
                (c as f64 / count as f64).ln()
            })
            .sum();
        total / count as f64
    };
    Ok(phi(m) - phi(m + 1))
}

/// Sample entropy `-ln(A/B)` without self-matches; errors when no template pair matches.
pub fn sampen(x: &[f64], m: usize, r_factor: f64) -> Result<f64> {
    if x.len() < 16 {
        return Err(Error::invalid("sample entropy needs at least 16 values"));
    }
    let r = r_factor * population_std(x);
    let templates = x.len() - m;
    let (mut a, mut b) = (0usize, 0usize);
    for i in 0..templates {
        for j in i + 1..templates {
            if chebyshev_close(x, i, j, m, r) {
                b += 1;
                if (x[i + m] - x[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        return Err(Error::invalid("sample entropy undefined: no matching templates"));
    }
    Ok(-(a as f64 / b as f64).ln())
}

/// Box sizes for the fluctuation analysis: integers log-spaced over `[4, n/4]`.
pub fn dfa_scales(n: usize) -> Vec<usize> {
    let (lo, hi) = (4.0f64, (n / 4) as f64);
    let mut k = 10;
    loop {
        let mut s: Vec<usize> = (0..k)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp().round() as usize)
            .collect();
        s.dedup();
        if s.len() >= 10 || k > 4 * (n / 4) {
            return s;
        }
        k += 1;
    }
}

fn detrended_ms(seg: &[f64]) -> f64 {
    let n = seg.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let ym = seg.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in seg.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (y - ym);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    seg.iter()
        .enumerate()
        .map(|(i, y)| (y - ym - slope * (i as f64 - tm)).powi(2))
        .sum::<f64>()
        / n
}

/// Detrended fluctuation analysis exponent (order-1 detrending, forward and
/// reverse non-overlapping boxes).
pub fn dfa(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 64 {
        return Err(Error::invalid(format!("DFA needs at least 64 values, got {n}")));
    }
    let m = crate::stats::mean(x);
    let mut acc = 0.0;
    let profile: Vec<f64> = x
        .iter()
        .map(|v| {
            acc += v - m;
            acc
        })
        .collect();
    let scales = dfa_scales(n);
    let mut lx = Vec::with_capacity(scales.len());
    let mut ly = Vec::with_capacity(scales.len());
    for &s in &scales {
        let boxes = n / s;
        let mut total = 0.0;
        for b in 0..boxes {
            total += detrended_ms(&profile[b * s..(b + 1) * s]);
            total += detrended_ms(&profile[n - (b + 1) * s..n - b * s]);
        }
        let f = (total / (2 * boxes) as f64).sqrt();
        if f == 0.0 {
            return Err(Error::invalid("DFA undefined for a series without fluctuation"));
        }
        lx.push((s as f64).ln());
        ly.push(f.ln());
    }
    let (mx, my) = (crate::stats::mean(&lx), crate::stats::mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Whole-night summary shown alongside the depth curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NightMetrics {
    /// Minutes.
    pub tst: f64,
    pub se: f64,
    /// Index·minutes.
    pub auc: f64,
    pub sleep_epochs: usize,
}

/// Sleep epochs: staged non-wake when stages are given, otherwise depth ≥ 0.2.
pub fn sleep_mask(sdi: &[f64], stages: Option<&[Stage]>) -> Result<Vec<bool>> {
    match stages {
        Some(s) if s.len() != sdi.len() => Err(Error::shape("stage count differs from the depth series")),
        Some(s) => Ok(s.iter().map(|st| st.is_sleep()).collect()),
        None => Ok(sdi.iter().map(|&v| v >= SHALLOW_THRESHOLD).collect()),
    }
}

pub fn night_metrics(sdi: &[f64], stages: Option<&[Stage]>) -> Result<NightMetrics> {
    nonempty(sdi)?;
    let sleep = sleep_mask(sdi, stages)?.iter().filter(|s| **s).count();
    let tst = sleep as f64 * 0.5;
    Ok(NightMetrics {
        tst,
        se: tst / (sdi.len() as f64 * 0.5),
        auc: sdi.iter().sum::<f64>() * 0.5,
        sleep_epochs: sleep,
    })
}

/// Entropy measure reported as APPe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    #[default]
    Approximate,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerOptions {
    pub rb_threshold: f64,
    pub entropy: EntropyKind,
    pub entropy_m: usize,
    pub entropy_r: f64,
}

impl Default for BiomarkerOptions {
    fn default() -> Self {
        BiomarkerOptions { rb_threshold: SHALLOW_THRESHOLD, entropy: EntropyKind::Approximate, entropy_m: 2, entropy_r: 0.2 }
    }
}

/// The eight per-night biomarkers. SK and MDR may be undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerVector {
    pub rb: f64,
    pub cv: f64,
    pub ap: f64,
    pub sk: Option<f64>,
    pub mdr: Option<f64>,
    pub pr: f64,
    pub appe: f64,
    pub detrf: f64,
}

impl BiomarkerVector {
    pub const NAMES: [&'static str; 8] = ["RB", "CV", "AP", "SK", "MDR", "PR", "APPe", "DETRf"];

    pub fn values(&self) -> [Option<f64>; 8] {
        [Some(self.rb), Some(self.cv), Some(self.ap), self.sk, self.mdr, Some(self.pr), Some(self.appe), Some(self.detrf)]
    }
}

/// Biomarkers of one night. The REM mask comes from stage labels when given,
/// otherwise from the predicted REM probability.
pub fn biomarkers(night: &SdiNight, stages: Option<&[Stage]>, opts: &BiomarkerOptions) -> Result<BiomarkerVector> {
    let sdi = &night.sdi;
    let metrics = night_metrics(sdi, stages)?;
    let rem: Vec<bool> = match stages {
        Some(s) => s.iter().map(|st| st.is_rem()).collect(),
        None => night.rem_mask(),
    };
    let appe = match opts.entropy {
        EntropyKind::Approximate => apen(sdi, opts.entropy_m, opts.entropy_r)?,
        EntropyKind::Sample => sampen(sdi, opts.entropy_m, opts.entropy_r)?,
    };
    Ok(BiomarkerVector {
        rb: rb(sdi, opts.rb_threshold)?,
        cv: cv(sdi)?,
        ap: ap(sdi, metrics.sleep_epochs)?,
        sk: skewness(sdi)?,
        mdr: mdr(sdi, &rem)?,
        pr: pr(&rem, metrics.sleep_epochs)?,
        appe,
        detrf: dfa(sdi)?,
    })
}

/// One row of the feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub recording_id: String,
    pub biomarkers: BiomarkerVector,
    pub metrics: NightMetrics,
}

pub const FEATURE_HEADER: &str = "recording_id,RB,CV,AP,SK,MDR,PR,APPe,DETRf,TST,SE,AUC";

/// Feature table; undefined values are empty cells.
pub fn features_csv(rows: &[FeatureRow]) -> String {
    let mut s = String::from(FEATURE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.recording_id);
        for v in r.biomarkers.values() {
            s.push(',');
            if let Some(v) = v {
                s.push_str(&v.to_string());
            }
        }
        s.push_str(&format!(",{},{},{}\n", r.metrics.tst, r.metrics.se, r.metrics.auc));
    }
    s
}

/// Parses a feature table into ids and the eight biomarker columns.
pub fn read_features_csv(text: &str) -> Result<(Vec<String>, Vec<[Option<f64>; 8]>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::invalid(format!("feature table: {e}")))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "recording_id")
        .ok_or_else(|| Error::invalid("feature table lacks recording_id"))?;
    let cols: Vec<usize> = BiomarkerVector::NAMES
        .iter()
        .map(|n| headers.iter().position(|h| h == *n).ok_or_else(|| Error::invalid(format!("feature table lacks {n}"))))
        .collect::<Result<_>>()?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::invalid(format!("feature table: {e}")))?;
        ids.push(rec[id_col].to_string());
        let mut row = [None; 8];
        for (k, &c) in cols.iter().enumerate() {
            let cell = &rec[c];
            if !cell.is_empty() {
                row[k] = Some(cell.parse().map_err(|_| Error::invalid(format!("bad feature value {cell:?}")))?);
            }
        }
        rows.push(row);
    }
    Ok((ids, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rb_examples() {
        assert_eq!(rb(&[0.1, 0.3, 0.15, 0.5], 0.2).unwrap(), 0.5);
        assert_eq!(rb(&[0.2, 0.3], 0.2).unwrap(), 0.0);
        assert_eq!(rb(&[0.0, 0.99], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap(&[0.5; 10], 10).unwrap(), 0.5);
        assert_eq!(ap(&[1.0, 1.0, 0.0, 0.0], 4).unwrap(), 0.5);
        assert!(ap(&[0.5], 0).is_err());
    }

    #[test]
    fn cv_and_skew() {
        assert_eq!(cv(&[0.4; 5]).unwrap(), 0.0);
        assert_eq!(skewness(&[0.4; 5]).unwrap(), None);
        let c = cv(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((c - 2.5f64.sqrt() / 3.0).abs() < 1e-12);
        assert!(skewness(&[0.0, 0.0, 0.0, 1.0]).unwrap().unwrap() > 0.0);
        assert!(cv(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rem_examples() {
        assert_eq!(mdr(&[0.2, 0.8], &[false, true]).unwrap(), Some(0.8));
        assert_eq!(mdr(&[0.2, 0.8], &[false, false]).unwrap(), None);
        assert_eq!(pr(&[false; 3], 3).unwrap(), 0.0);
        let mut mask = vec![false; 100];
        mask[..20].iter_mut().for_each(|m| *m = true);
        assert_eq!(pr(&mask, 100).unwrap(), 0.2);
    }

    #[test]
    fn metrics_examples() {
        let m = night_metrics(&[0.5; 100], None).unwrap();
        assert_eq!((m.tst, m.se, m.auc), (50.0, 1.0, 25.0));
        let w = night_metrics(&[0.5; 10], Some(&[Stage::W; 10])).unwrap();
        assert_eq!((w.tst, w.se), (0.0, 0.0));
    }

    #[test]
    fn scales_cover_range() {
        for n in [64, 240, 960, 4096] {
            let s = dfa_scales(n);
            assert!(s.len() >= 10, "{n}: {s:?}");
            assert_eq!(s[0], 4);
            assert_eq!(*s.last().unwrap(), n / 4);
        }
    }

    #[test]
    fn feature_csv_round_trip() {
        let row = FeatureRow {
            recording_id: "S1".into(),
            biomarkers: BiomarkerVector { rb: 0.3, cv: 0.5, ap: 0.6, sk: None, mdr: Some(0.4), pr: 0.2, appe: 0.7, detrf: 1.1 },
            metrics: NightMetrics { tst: 100.0, se: 0.9, auc: 50.0, sleep_epochs: 200 },
        };
        let text = features_csv(&[row]);
        assert!(text.starts_with(FEATURE_HEADER));
        assert!(text.contains("S1,0.3,0.5,0.6,,0.4,0.2,0.7,1.1,100,0.9,50"));
        let (ids, rows) = read_features_csv(&text).unwrap();
        assert_eq!(ids, vec!["S1"]);
        assert_eq!(rows[0][3], None);
        assert_eq!(rows[0][4], Some(0.4));
    }
}
