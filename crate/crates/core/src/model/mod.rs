//! Single-stream pre-norm transformer: configuration, parameters, and the
//! encoder forward pass.

pub mod encoder;
pub mod params;

pub use encoder::{embed_image, embed_text, encoder_block, forward, fuse, pool, ForwardOutput};
pub use params::{LayerParams, ModelParams, ParamSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size.
    pub hidden: usize,
    /// Encoder depth.
    pub depth: usize,
    pub heads: usize,
    /// MLP inner size.
    pub mlp: usize,
    /// Patch size in pixels.
    pub patch: usize,
    pub vocab_size: usize,
    /// Maximum text length including the class slot.
    pub max_text_len: usize,
    /// Maximum number of visual patches.
    pub max_patches: usize,
    /// Native position-embedding grid (interpolated to each image's grid).
    pub pos_grid: (usize, usize),
    pub ln_eps: f64,
    pub dropout: f64,
    /// Apply a final layer norm after the last block (pre-norm convention).
    pub final_ln: bool,
}

impl ModelConfig {
    /// Full-scale base preset: H=768, D=12, 12 heads, MLP 3072, 32px patches.
    pub fn base() -> Self {
        ModelConfig {
            hidden: 768,
            depth: 12,
            heads: 12,
            mlp: 3072,
            patch: 32,
            vocab_size: 30_522,
            max_text_len: 40,
            max_patches: 240,
            pos_grid: (7, 7),
            ln_eps: 1e-6,
            dropout: 0.0,
            final_ln: true,
        }
    }

    /// Desk-scale preset used for CPU training on the synthetic corpus.
    pub fn desk() -> Self {
        ModelConfig {
            hidden: 64,
            depth: 2,
            heads: 4,
            mlp: 256,
            patch: 16,
            vocab_size: 0, // filled in from the vocabulary file
            max_text_len: 24,
            max_patches: 64,
            pos_grid: (4, 4),
            ln_eps: 1e-6,
            dropout: 0.0,
            final_ln: true,
        }
    }

    /// Minimal configuration for gradient checks and unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 8,
            depth: 2,
            heads: 2,
            mlp: 16,
            patch: 4,
            vocab_size: 16,
            max_text_len: 8,
            max_patches: 9,
            pos_grid: (3, 3),
            ln_eps: 1e-6,
            dropout: 0.0,
            final_ln: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.mlp == 0 || self.patch == 0 {
            return Err(Error::Config("sizes must be >= 1".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be set".into()));
        }
        if self.max_text_len < 2 || self.max_patches == 0 {
            return Err(Error::Config("sequence limits too small".into()));
        }
        if self.pos_grid.0 == 0 || self.pos_grid.1 == 0 {
            return Err(Error::Config("pos_grid must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_preset_validates() {
        assert!(ModelConfig::base().validate().is_ok());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
