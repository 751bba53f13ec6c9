use serde::{Deserialize, Serialize};

use super::recording::Recording;
use crate::error::{Error, Result};
use crate::stage::Stage;

pub const EPOCH_SECONDS: f64 = 30.0;
pub const N_CHANNELS: usize = 4;
pub const EPOCH_SAMPLES: usize = 3000;
pub const EPOCH_LEN: usize = N_CHANNELS * EPOCH_SAMPLES;

/// Scored arousal events, in seconds from recording start.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArousalEvents {
    pub events: Vec<ArousalEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArousalEvent {
    pub start: f64,
    pub duration: f64,
}

impl ArousalEvents {
    pub fn new(events: Vec<ArousalEvent>) -> Result<Self> {
        for e in &events {
            if !(e.start >= 0.0 && e.start.is_finite()) {
                return Err(Error::invalid(format!("arousal start {} must be non-negative", e.start)));
            }
            if !(e.duration > 0.0 && e.duration.is_finite()) {
                return Err(Error::invalid(format!("arousal duration {} must be positive", e.duration)));
            }
        }
        Ok(ArousalEvents { events })
    }

    pub fn total_seconds(&self) -> f64 {
        self.events.iter().map(|e| e.duration).sum()
    }
}

/// Fraction of epoch `epoch_index` covered by arousals, clamped to [0, 1].
pub fn arousal_proportion(events: &ArousalEvents, epoch_index: usize) -> f64 {
    let lo = epoch_index as f64 * EPOCH_SECONDS;
    let hi = lo + EPOCH_SECONDS;
    let covered: f64 = events
        .events
        .iter()
        .map(|e| ((e.start + e.duration).min(hi) - e.start.max(lo)).max(0.0))
        .sum();
    (covered / EPOCH_SECONDS).clamp(0.0, 1.0)
}

/// Sequence of 4×3000 epochs (EEG, EOG, EMG, ECG at 100 Hz) stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochGrid {
    data: Vec<f32>,
    n_epochs: usize,
    pub stages: Option<Vec<Stage>>,
    pub arousal_proportion: Option<Vec<f64>>,
}

impl EpochGrid {
    pub fn from_epochs(epochs: Vec<Vec<f32>>, stages: Option<Vec<Stage>>, arousal: Option<Vec<f64>>) -> Result<Self> {
        let n = epochs.len();
        let mut data = Vec::with_capacity(n * EPOCH_LEN);
        for (i, e) in epochs.iter().enumerate() {
            if e.len() != EPOCH_LEN {
                return Err(Error::shape(format!("epoch {i} holds {} values, expected {EPOCH_LEN}", e.len())));
            }
            data.extend_from_slice(e);
        }
        Self::from_flat(data, n, stages, arousal)
    }

    pub fn from_flat(data: Vec<f32>, n_epochs: usize, stages: Option<Vec<Stage>>, arousal: Option<Vec<f64>>) -> Result<Self> {
        if data.len() != n_epochs * EPOCH_LEN {
            return Err(Error::shape(format!("{} values for {n_epochs} epochs", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("epoch data contains non-finite values"));
        }
        if let Some(s) = &stages {
            if s.len() != n_epochs {
                return Err(Error::invalid(format!("{} stage labels for {n_epochs} epochs", s.len())));
            }
        }
        if let Some(a) = &arousal {
            if a.len() != n_epochs {
                return Err(Error::invalid(format!("{} arousal values for {n_epochs} epochs", a.len())));
            }
            if a.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("arousal proportions must lie in [0, 1]"));
            }
        }
        Ok(EpochGrid { data, n_epochs, stages, arousal_proportion: arousal })
    }

    pub fn len(&self) -> usize {
        self.n_epochs
    }

    pub fn is_empty(&self) -> bool {
        self.n_epochs == 0
    }

    /// Channel-major 4×3000 slice.
    pub fn epoch(&self, i: usize) -> &[f32] {
        &self.data[i * EPOCH_LEN..(i + 1) * EPOCH_LEN]
    }

    pub fn stage(&self, i: usize) -> Option<Stage> {
        self.stages.as_ref().map(|s| s[i])
    }
}

/// Cuts a 4-channel 100 Hz recording into 30 s epochs, discarding the trailing partial epoch.
pub fn segment_epochs(
    recording: &Recording,
    stages: Option<&[Stage]>,
    arousals: Option<&ArousalEvents>,
) -> Result<EpochGrid> {
    let ch = recording.channels();
    if ch.len() != N_CHANNELS {
        return Err(Error::shape(format!("expected {N_CHANNELS} channels, got {}", ch.len())));
    }
    let len = ch[0].samples.len();
    for c in ch {
        if c.samples.len() != len {
            return Err(Error::shape(format!(
                "channel length mismatch: {} has {} samples, {} has {len}",
                c.label,
                c.samples.len(),
                ch[0].label
            )));
        }
        if (c.sampling_rate - super::resample::TARGET_RATE).abs() > 1e-9 {
            return Err(Error::invalid(format!("{} is at {} Hz, expected 100 Hz", c.label, c.sampling_rate)));
        }
    }
    let n = len / EPOCH_SAMPLES;
    let mut data = Vec::with_capacity(n * EPOCH_LEN);
    for e in 0..n {
        for c in ch {
            data.extend(c.samples[e * EPOCH_SAMPLES..(e + 1) * EPOCH_SAMPLES].iter().map(|&v| v as f32));
        }
    }
    let arousal = arousals.map(|a| (0..n).map(|i| arousal_proportion(a, i)).collect());
    EpochGrid::from_flat(data, n, stages.map(<[Stage]>::to_vec), arousal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf_io::Channel;
    use chrono::NaiveDate;

    fn rec(seconds: usize) -> Recording {
        let n = seconds * 100;
        let chans = (0..4)
            .map(|c| Channel {
                label: format!("c{c}"),
                sampling_rate: 100.0,
                samples: (0..n).map(|i| (c * 10_000 + i) as f64).collect(),
            })
            .collect();
        Recording::new(chans, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()).unwrap()
    }

    #[test]
    fn ten_minutes_is_twenty_epochs() {
        assert_eq!(segment_epochs(&rec(600), None, None).unwrap().len(), 20);
    }

    #[test]
    fn partial_epoch_discarded() {
        let g = segment_epochs(&rec(95), None, None).unwrap();
        assert_eq!(g.len(), 3);
        // channel 1, epoch 2, first sample
        assert_eq!(g.epoch(2)[EPOCH_SAMPLES], (10_000 + 6000) as f32);
    }

    #[test]
    fn stage_count_must_match() {
        let stages = vec![Stage::W; 4];
        assert!(segment_epochs(&rec(95), Some(&stages), None).is_err());
        assert!(segment_epochs(&rec(95), Some(&stages[..3]), None).is_ok());
    }

    #[test]
    fn unequal_channels_rejected() {
        let mut chans = rec(60).into_channels();
        chans[3].samples.pop();
        let r = Recording::new(chans, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()).unwrap();
        assert!(matches!(segment_epochs(&r, None, None), Err(Error::Shape(_))));
    }

    #[test]
    fn arousal_overlap_by_hand() {
        let ev = ArousalEvents::new(vec![ArousalEvent { start: 45.0, duration: 30.0 }]).unwrap();
        assert_eq!(arousal_proportion(&ev, 1), 0.5);
        assert_eq!(arousal_proportion(&ev, 2), 0.5);
        assert_eq!(arousal_proportion(&ArousalEvents::default(), 1), 0.0);
        let full = ArousalEvents::new(vec![ArousalEvent { start: 30.0, duration: 30.0 }]).unwrap();
        assert_eq!(arousal_proportion(&full, 1), 1.0);
        assert_eq!(arousal_proportion(&full, 0), 0.0);
    }

    #[test]
    fn invalid_events_rejected() {
        assert!(ArousalEvents::new(vec![ArousalEvent { start: -1.0, duration: 3.0 }]).is_err());
        assert!(ArousalEvents::new(vec![ArousalEvent { start: 1.0, duration: 0.0 }]).is_err());
    }
}
