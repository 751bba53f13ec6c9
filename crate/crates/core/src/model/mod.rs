//! Transformer encoder for 30 s PSG epochs and its checkpoint format.

mod checkpoint;
mod config;
mod encoder;

pub use checkpoint::{load_checkpoint, load_from_path, save_checkpoint, save_to_path, write_atomic, Manifest, ParamEntry};
pub use config::ModelConfig;
pub use encoder::{ForwardVars, Mode, Prediction, SdiModel};
