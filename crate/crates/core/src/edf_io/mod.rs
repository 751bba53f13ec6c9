//! EDF reading and writing, channel selection, resampling, epoching and
//! annotation sidecars.

mod annotations;
mod epochs;
mod format;
mod recording;
mod resample;

pub use annotations::Annotations;
pub use epochs::{
    arousal_proportion, segment_epochs, ArousalEvent, ArousalEvents, EpochGrid, EPOCH_LEN, EPOCH_SAMPLES,
    EPOCH_SECONDS, N_CHANNELS,
};
pub use format::{parse_edf, parse_edf_header, write_edf, EdfFile, EdfHeader, SignalSpec};
pub use recording::{select_channels, Channel, ChannelMap, Recording};
pub use resample::{resample, TARGET_RATE};

use crate::error::Result;
use crate::stage::Stage;

/// Parse, select channels, bring everything to 100 Hz and cut into epochs.
pub fn load_epochs(
    edf_bytes: &[u8],
    map: &ChannelMap,
    stages: Option<&[Stage]>,
    arousals: Option<&ArousalEvents>,
) -> Result<EpochGrid> {
    let rec = parse_edf(edf_bytes)?;
    let selected = select_channels(&rec, map)?;
    let start = selected.start_datetime();
    let mut chans = selected.into_channels();
    for c in &mut chans {
        c.samples = resample(&c.samples, c.sampling_rate, TARGET_RATE)?;
        c.sampling_rate = TARGET_RATE;
    }
    let min_len = chans.iter().map(|c| c.samples.len()).min().unwrap_or(0);
    for c in &mut chans {
        c.samples.truncate(min_len);
    }
    let rec = Recording::new(chans, start)?;
    let n_epochs = min_len / EPOCH_SAMPLES;
    // Sidecar stage lists may include a final partial epoch; keep the scored prefix.
    let stages = stages.map(|s| if s.len() == n_epochs + 1 { &s[..n_epochs] } else { s });
    segment_epochs(&rec, stages, arousals)
}
