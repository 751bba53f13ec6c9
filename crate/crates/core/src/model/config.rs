use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Physiological channels per epoch.
    pub channels: usize,
    /// Samples per channel per epoch.
    pub epoch_len: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    /// Applied to token embeddings and MLP outputs while training.
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration used for tests and laptop-scale training.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 4,
            epoch_len: 3000,
            patch_size: 100,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_dim: 128,
            dropout: 0.1,
            ln_eps: 1e-5,
        }
    }

    /// Full-size configuration: D=512, 6 layers, 8 heads, MLP 2048.
    pub fn full() -> Self {
        ModelConfig { dim: 512, depth: 6, heads: 8, mlp_dim: 2048, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("epoch_len", self.epoch_len),
            ("patch_size", self.patch_size),
            ("dim", self.dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be positive")));
        }
        if !self.epoch_len.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "model config: epoch_len {} is not a multiple of patch_size {}",
                self.epoch_len, self.patch_size
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "model config: dim {} is not a multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("model config: dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Patches per channel.
    pub fn patches_per_channel(&self) -> usize {
        self.epoch_len / self.patch_size
    }

    /// Patches per epoch, excluding the CLS token.
    pub fn n_patches(&self) -> usize {
        self.channels * self.patches_per_channel()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.epoch_len
    }
}
