use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub label: String,
    /// Hz
    pub sampling_rate: f64,
    /// Physical units.
    pub samples: Vec<f64>,
}

/// Multichannel signals with per-channel sampling rates.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    channels: Vec<Channel>,
    start_datetime: NaiveDateTime,
}

impl Recording {
    pub fn new(channels: Vec<Channel>, start_datetime: NaiveDateTime) -> Result<Self> {
        for c in &channels {
            if c.samples.is_empty() {
                return Err(Error::invalid(format!("channel {} has no samples", c.label)));
            }
            if !(c.sampling_rate > 0.0 && c.sampling_rate.is_finite()) {
                return Err(Error::invalid(format!("channel {} has sampling rate {}", c.label, c.sampling_rate)));
            }
        }
        Ok(Recording { channels, start_datetime })
    }

    /// A recording with no channels, only useful as a writer error case.
    pub fn empty(start_datetime: NaiveDateTime) -> Self {
        Recording { channels: Vec::new(), start_datetime }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Channel> {
        self.channels
    }

    pub fn start_datetime(&self) -> NaiveDateTime {
        self.start_datetime
    }

    pub fn labels(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.label.as_str()).collect()
    }
}

/// Label patterns for the four model channels, matched as case-insensitive substrings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub eeg: String,
    pub eog: String,
    pub emg: String,
    pub ecg: String,
}

impl Default for ChannelMap {
    fn default() -> Self {
        ChannelMap { eeg: "C4".into(), eog: "EOG".into(), emg: "EMG".into(), ecg: "ECG".into() }
    }
}

impl ChannelMap {
    pub fn roles(&self) -> [(&'static str, &str); 4] {
        [("EEG", &self.eeg), ("EOG", &self.eog), ("EMG", &self.emg), ("ECG", &self.ecg)]
    }
}

/// Picks the EEG, EOG, EMG and ECG channels, in that order. First match wins.
pub fn select_channels(recording: &Recording, map: &ChannelMap) -> Result<Recording> {
    let mut out = Vec::with_capacity(4);
    for (role, pattern) in map.roles() {
        if pattern.trim().is_empty() {
            return Err(Error::invalid(format!("empty channel pattern for {role}")));
        }
        let needle = pattern.to_lowercase();
        let found = recording
            .channels
            .iter()
            .find(|c| c.label.to_lowercase().contains(&needle))
            .ok_or_else(|| Error::MissingChannel { role, pattern: pattern.to_string() })?;
        out.push(found.clone());
    }
    Ok(Recording { channels: out, start_datetime: recording.start_datetime })
}
