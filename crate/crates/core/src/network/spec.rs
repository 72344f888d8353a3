use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    S,
    M,
    Custom,
}

/// Architecture of a latent predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    pub num_blocks: usize,
    pub hidden_dim: usize,
    /// Pointwise expansion factor inside each block.
    pub expansion: usize,
    pub latent_channels_in: usize,
    /// Channels per output stream.
    pub latent_channels_out: usize,
    /// 1 for a single latent, 2 for left/right stacked output.
    pub output_streams: usize,
    pub conditioned: bool,
    pub condition_dim: usize,
    pub dw_kernel: usize,
}

impl ModelSpec {
    /// 4 blocks, hidden 512.
    pub fn small(latent_channels: usize) -> Self {
        Self {
            variant: Variant::S,
            num_blocks: 4,
            hidden_dim: 512,
            expansion: 2,
            latent_channels_in: latent_channels,
            latent_channels_out: latent_channels,
            output_streams: 1,
            conditioned: false,
            condition_dim: 0,
            dw_kernel: 7,
        }
    }

    /// 8 blocks, hidden 768.
    pub fn medium(latent_channels: usize) -> Self {
        Self {
            variant: Variant::M,
            num_blocks: 8,
            hidden_dim: 768,
            ..Self::small(latent_channels)
        }
    }

    /// Turns a spec into the stereo upmixer: conditioned blocks and a
    /// left/right stacked output.
    pub fn stereo(self, condition_dim: usize) -> Self {
        Self {
            output_streams: 2,
            conditioned: true,
            condition_dim,
            ..self
        }
    }

    pub fn custom(num_blocks: usize, hidden_dim: usize, latent_channels: usize) -> Self {
        Self {
            variant: Variant::Custom,
            num_blocks,
            hidden_dim,
            ..Self::small(latent_channels)
        }
    }

    pub fn output_channels(&self) -> usize {
        self.latent_channels_out * self.output_streams
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_blocks", self.num_blocks),
            ("hidden_dim", self.hidden_dim),
            ("expansion", self.expansion),
            ("latent_channels_in", self.latent_channels_in),
            ("latent_channels_out", self.latent_channels_out),
            ("output_streams", self.output_streams),
            ("dw_kernel", self.dw_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.dw_kernel % 2 == 0 {
            return Err(Error::invalid("dw_kernel", "must be odd"));
        }
        if self.conditioned && self.condition_dim == 0 {
            return Err(Error::invalid("condition_dim", "conditioned model needs condition_dim > 0"));
        }
        Ok(())
    }
}

/// Architecture of the conditioning encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningEncoderSpec {
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub expansion: usize,
    pub dw_kernel: usize,
    /// `2 * C` for a stacked stereo latent.
    pub input_channels: usize,
    pub output_dim: usize,
}

impl ConditioningEncoderSpec {
    pub fn new(latent_channels: usize, output_dim: usize) -> Self {
        Self {
            num_blocks: 2,
            hidden_dim: 768,
            expansion: 2,
            dw_kernel: 7,
            input_channels: 2 * latent_channels,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_blocks", self.num_blocks),
            ("hidden_dim", self.hidden_dim),
            ("expansion", self.expansion),
            ("input_channels", self.input_channels),
            ("output_dim", self.output_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.dw_kernel % 2 == 0 {
            return Err(Error::invalid("dw_kernel", "must be odd"));
        }
        Ok(())
    }
}
