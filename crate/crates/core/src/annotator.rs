//! Whole-night inference: per-epoch depth index and REM probability.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::edf_io::{EpochGrid, EPOCH_SECONDS};
use crate::error::{Error, Result};
use crate::model::SdiModel;
use crate::numeric::sigmoid;
use crate::stage::Stage;

/// Probability above which an epoch counts as REM.
pub const REM_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdiNight {
    pub sdi: Vec<f64>,
    pub rem_prob: Vec<f64>,
    pub epoch_duration: f64,
}

impl SdiNight {
    pub fn new(sdi: Vec<f64>, rem_prob: Vec<f64>) -> Result<Self> {
        if sdi.len() != rem_prob.len() {
            return Err(Error::shape(format!("{} depth values for {} REM probabilities", sdi.len(), rem_prob.len())));
        }
        if sdi.iter().chain(&rem_prob).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("depth index and REM probability must lie in [0, 1]"));
        }
        Ok(SdiNight { sdi, rem_prob, epoch_duration: EPOCH_SECONDS })
    }

    pub fn n_epochs(&self) -> usize {
        self.sdi.len()
    }

    /// Predicted REM mask at [`REM_THRESHOLD`].
    pub fn rem_mask(&self) -> Vec<bool> {
        self.rem_prob.iter().map(|&p| p > REM_THRESHOLD).collect()
    }

    /// One row per epoch: `epoch,sdi,rem_prob[,stage_label][,arousal_prop]`.
    pub fn to_csv(&self, stages: Option<&[Stage]>, arousal: Option<&[f64]>) -> Result<String> {
        let n = self.n_epochs();
        if stages.is_some_and(|s| s.len() != n) || arousal.is_some_and(|a| a.len() != n) {
            return Err(Error::shape("annotation columns differ in length from the night"));
        }
        let mut out = String::from("epoch,sdi,rem_prob");
        if stages.is_some() {
            out.push_str(",stage_label");
        }
        if arousal.is_some() {
            out.push_str(",arousal_prop");
        }
        out.push('\n');
        for i in 0..n {
            write!(out, "{i},{},{}", self.sdi[i], self.rem_prob[i]).expect("string write");
            if let Some(s) = stages {
                write!(out, ",{}", s[i].label()).expect("string write");
            }
            if let Some(a) = arousal {
                write!(out, ",{}", a[i]).expect("string write");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses the CSV written by [`SdiNight::to_csv`], returning the optional columns too.
    pub fn from_csv(text: &str) -> Result<(SdiNight, Option<Vec<Stage>>, Option<Vec<f64>>)> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Annotation(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (ci, cs, cr) = match (col("epoch"), col("sdi"), col("rem_prob")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Annotation("night CSV needs epoch, sdi and rem_prob columns".into())),
        };
        let (cst, ca) = (col("stage_label"), col("arousal_prop"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Annotation(format!("bad number {s:?}")));
        let (mut sdi, mut rem, mut st, mut ar) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Annotation(e.to_string()))?;
            if rec[ci].parse::<usize>().ok() != Some(k) {
                return Err(Error::Annotation(format!("epoch column out of order at row {k}")));
            }
            sdi.push(num(&rec[cs])?);
            rem.push(num(&rec[cr])?);
            if let Some(c) = cst {
                st.push(rec[c].parse()?);
            }
            if let Some(c) = ca {
                ar.push(num(&rec[c])?);
            }
        }
        Ok((SdiNight::new(sdi, rem)?, cst.map(|_| st), ca.map(|_| ar)))
    }
}

/// `sdi_t = sigmoid(raw_depth_t)`, `rem_prob_t = softmax(logits_t)[REM]`, dropout off.
pub fn annotate_night(grid: &EpochGrid, model: &SdiModel) -> Result<SdiNight> {
    let epochs: Vec<&[f32]> = (0..grid.len()).map(|i| grid.epoch(i)).collect();
    let preds = model.predict_batch(&epochs)?;
    let sdi = preds.iter().map(|p| sigmoid(p.raw_depth)).collect();
    let rem = preds.iter().map(|p| sigmoid(p.rem_logits[1] - p.rem_logits[0])).collect();
    SdiNight::new(sdi, rem)
}

/// `d_t = sdi_{t-1} - sdi_t` for `t = 1..n`.
pub fn depth_decrease(night: &SdiNight) -> Result<Vec<f64>> {
    if night.n_epochs() < 2 {
        return Err(Error::invalid("depth decrease needs at least two epochs"));
    }
    Ok(night.sdi.windows(2).map(|w| w[0] - w[1]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decrease_examples() {
        let n = SdiNight::new(vec![0.8, 0.3], vec![0.0, 0.0]).unwrap();
        assert_eq!(depth_decrease(&n).unwrap(), vec![0.8 - 0.3]);
        let inc = SdiNight::new(vec![0.1, 0.2, 0.5, 0.9], vec![0.0; 4]).unwrap();
        assert!(depth_decrease(&inc).unwrap().iter().all(|d| *d < 0.0));
        let flat = SdiNight::new(vec![0.4; 5], vec![0.0; 5]).unwrap();
        assert!(depth_decrease(&flat).unwrap().iter().all(|d| *d == 0.0));
        assert!(depth_decrease(&SdiNight::new(vec![0.4], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn telescoping_sum() {
        let sdi: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let n = SdiNight::new(sdi.clone(), vec![0.0; 50]).unwrap();
        let s: f64 = depth_decrease(&n).unwrap().iter().sum();
        assert!((s - (sdi[0] - sdi[49])).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let n = SdiNight::new(vec![0.25, 0.75], vec![0.1, 0.9]).unwrap();
        let text = n.to_csv(Some(&[Stage::N2, Stage::R]), Some(&[0.0, 0.5])).unwrap();
        assert!(text.starts_with("epoch,sdi,rem_prob,stage_label,arousal_prop\n0,0.25,0.1,N2,0\n"));
        let (back, st, ar) = SdiNight::from_csv(&text).unwrap();
        assert_eq!(back, n);
        assert_eq!(st.unwrap(), vec![Stage::N2, Stage::R]);
        assert_eq!(ar.unwrap(), vec![0.0, 0.5]);
        assert_eq!(n.rem_mask(), vec![false, true]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SdiNight::new(vec![1.5], vec![0.0]).is_err());
        assert!(SdiNight::new(vec![0.5], vec![]).is_err());
    }
}
