//! Continuous sleep depth index (SDI) annotation.
//!
//! The pipeline reads four-channel polysomnography from EDF, cuts it into 30 s
//! epochs at 100 Hz, scores each epoch with a small transformer encoder trained
//! by a margin-based pairwise ranking loss on stage labels, and turns the
//! resulting whole-night depth curves into biomarkers, subtypes and statistics.

pub mod edf_io;
pub mod annotator;
pub mod biomarkers;
pub mod error;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod par;
pub mod rng;
pub mod stage;
pub mod stats;
pub mod subtyping;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use stage::Stage;
