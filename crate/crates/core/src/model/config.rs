use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Pre-LayerNorm vision transformer with CLS pooling.
    Vit,
    /// Small strided-convolution encoder with the same output size.
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub decoder_channels: usize,
    pub encoder: EncoderKind,
    /// Fixed per-axis output scale of the final linear layer, N.
    pub force_scale: [f64; 3],
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            decoder_channels: 32,
            encoder: EncoderKind::Vit,
            force_scale: [4.0, 4.0, 15.0],
            seed: 0,
        }
    }
}

/// Number of stride-2 upsampling stages in the decoder.
pub const DECODER_STAGES: usize = 4;
pub const BOTTLENECKS: usize = 4;
pub const MIN_BOTTLENECK_WIDTH: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FafError::Config(m));
        if self.patch_size == 0 || self.input_size == 0 || self.input_size % self.patch_size != 0 {
            return bad(format!("input size {} must be a multiple of patch size {}", self.input_size, self.patch_size));
        }
        if self.input_size % (1 << DECODER_STAGES) != 0 {
            return bad(format!("input size {} must be a multiple of 16", self.input_size));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed dim {} must be divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.depth == 0 || self.mlp_ratio == 0 {
            return bad("depth and mlp ratio must be positive".into());
        }
        if self.decoder_channels < 1 << DECODER_STAGES {
            return bad(format!("decoder needs at least 16 base channels, got {}", self.decoder_channels));
        }
        if self.force_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("force scale must be positive".into());
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let side = self.input_size / self.patch_size;
        side * side + 1
    }

    /// Bottleneck output widths: halving from K, floored at 16.
    pub fn regressor_widths(&self) -> Vec<usize> {
        let mut w = self.embed_dim;
        (0..BOTTLENECKS)
            .map(|_| {
                w = (w / 2).max(MIN_BOTTLENECK_WIDTH);
                w
            })
            .collect()
    }

    /// Side of the grid the decoder projection reshapes into.
    pub fn decoder_grid(&self) -> usize {
        self.input_size >> DECODER_STAGES
    }

    /// Channels entering each upsampling stage, then the stage output.
    pub fn decoder_channel_plan(&self) -> Vec<usize> {
        (0..=DECODER_STAGES).map(|i| self.decoder_channels >> i).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| FafError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_arithmetic() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens(), 17);
        assert_eq!(c.regressor_widths(), vec![32, 16, 16, 16]);
        assert_eq!(c.decoder_grid(), 2);
        assert_eq!(c.decoder_channel_plan(), vec![32, 16, 8, 4, 2]);
    }

    #[test]
    fn invalid_configs() {
        for c in [
            ModelConfig { input_size: 30, ..Default::default() },
            ModelConfig { heads: 3, ..Default::default() },
            ModelConfig { input_size: 24, patch_size: 8, ..Default::default() },
            ModelConfig { decoder_channels: 8, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let c = ModelConfig { encoder: EncoderKind::Conv, depth: 2, ..Default::default() };
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
