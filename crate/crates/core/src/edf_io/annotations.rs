//! Stage and arousal sidecars.
//!
//! JSON: `{"stages": [0, 1, ...], "arousals": [{"start": 12.0, "duration": 5.0}]}`.
//! CSV: a stage file with columns `epoch_index,stage` (stage as `W`/`N1`/`N2`/`N3`/`R`
//! or 0–4) and an arousal file with columns `arousal_start_sec,arousal_duration_sec`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::epochs::{ArousalEvent, ArousalEvents};
use crate::error::{Error, Result};
use crate::stage::Stage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub arousals: Vec<ArousalEvent>,
}

impl Annotations {
    pub fn arousal_events(&self) -> Result<ArousalEvents> {
        ArousalEvents::new(self.arousals.clone())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Annotations = serde_json::from_str(text).map_err(|e| Error::Annotation(e.to_string()))?;
        a.arousal_events()?;
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the stage CSV. Rows may come in any order but must cover `0..n` exactly once.
    pub fn stages_from_csv(text: &str) -> Result<Vec<Stage>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Annotation(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Annotation(format!("stage CSV lacks a {name} column")))
        };
        let (ci, cs) = (col("epoch_index")?, col("stage")?);
        let mut rows: Vec<(usize, Stage)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Annotation(e.to_string()))?;
            let idx: usize = rec[ci]
                .parse()
                .map_err(|_| Error::Annotation(format!("bad epoch index {:?}", &rec[ci])))?;
            rows.push((idx, rec[cs].parse()?));
        }
        rows.sort_by_key(|r| r.0);
        for (expect, (idx, _)) in rows.iter().enumerate() {
            if *idx != expect {
                return Err(Error::Annotation(format!("stage rows skip or repeat epoch {expect}")));
            }
        }
        Ok(rows.into_iter().map(|r| r.1).collect())
    }

    pub fn arousals_from_csv(text: &str) -> Result<Vec<ArousalEvent>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Annotation(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Annotation(format!("arousal CSV lacks a {name} column")))
        };
        let (cs, cd) = (col("arousal_start_sec")?, col("arousal_duration_sec")?);
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Annotation(e.to_string()))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Annotation(format!("bad number {s:?}")));
            out.push(ArousalEvent { start: num(&rec[cs])?, duration: num(&rec[cd])? });
        }
        ArousalEvents::new(out.clone())?;
        Ok(out)
    }

    pub fn stages_to_csv(stages: &[Stage]) -> String {
        let mut s = String::from("epoch_index,stage\n");
        for (i, st) in stages.iter().enumerate() {
            s.push_str(&format!("{i},{st}\n"));
        }
        s
    }

    pub fn arousals_to_csv(events: &[ArousalEvent]) -> String {
        let mut s = String::from("arousal_start_sec,arousal_duration_sec\n");
        for e in events {
            s.push_str(&format!("{},{}\n", e.start, e.duration));
        }
        s
    }

    /// Loads a sidecar by extension: `.json`, or a stage `.csv` with an optional
    /// companion arousal CSV.
    pub fn load(path: &Path, arousal_csv: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let mut a = if ext == "csv" {
            Annotations { stages: Some(Self::stages_from_csv(&text)?), arousals: Vec::new() }
        } else {
            Self::from_json(&text)?
        };
        if let Some(p) = arousal_csv {
            a.arousals = Self::arousals_from_csv(&std::fs::read_to_string(p)?)?;
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let a = Annotations {
            stages: Some(vec![Stage::W, Stage::N2, Stage::R]),
            arousals: vec![ArousalEvent { start: 31.5, duration: 4.0 }],
        };
        let back = Annotations::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn json_without_stages() {
        let a = Annotations::from_json(r#"{"arousals":[{"start":1,"duration":2}]}"#).unwrap();
        assert!(a.stages.is_none());
        assert!(Annotations::from_json(r#"{"arousals":[{"start":1,"duration":-2}]}"#).is_err());
        assert!(Annotations::from_json(r#"{"stages":[9]}"#).is_err());
    }

    #[test]
    fn stage_csv_accepts_labels_and_codes() {
        let s = Annotations::stages_from_csv("epoch_index,stage\n1,N2\n0,W\n2,4\n").unwrap();
        assert_eq!(s, vec![Stage::W, Stage::N2, Stage::R]);
        assert!(Annotations::stages_from_csv("epoch_index,stage\n0,W\n2,N1\n").is_err());
        let round = Annotations::stages_from_csv(&Annotations::stages_to_csv(&s)).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn arousal_csv() {
        let e = Annotations::arousals_from_csv("arousal_start_sec,arousal_duration_sec\n45,30\n100.5,3\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1].start, 100.5);
        assert!(Annotations::arousals_from_csv("start,dur\n1,2\n").is_err());
    }
}
