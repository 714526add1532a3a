//! High-frequency detail branch: Laplacian residual embedding and the
//! six-block encoder grid.

use std::collections::BTreeMap;

use candle_core::Tensor;

use super::laplacian::{laplacian_decompose, PYRAMID_LEVELS};
use super::layers::{ChannelLayerNorm, Conv2d};
use super::params::{join, ParamStore};
use crate::error::{Error, Result};

/// Strided 2x2 convolution of the residual composite followed by channel LN.
pub struct HighFreqEmbed {
    conv: Conv2d,
    norm: ChannelLayerNorm,
}

impl HighFreqEmbed {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &join(path, "conv"), 3 * PYRAMID_LEVELS, channels, 2, 2, 0)?,
            norm: ChannelLayerNorm::new(store, &join(path, "norm"), channels)?,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn norm(&self) -> &ChannelLayerNorm {
        &self.norm
    }

    pub fn forward(&self, composite: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.conv.forward(composite)?)
    }
}

/// Shape-preserving residual block: `relu(ln(conv(relu(ln(conv(x))))) + x)`.
pub struct EncoderBlock {
    conv1: Conv2d,
    norm1: ChannelLayerNorm,
    conv2: Conv2d,
    norm2: ChannelLayerNorm,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::same3(store, &join(path, "conv1"), channels, channels)?,
            norm1: ChannelLayerNorm::new(store, &join(path, "norm1"), channels)?,
            conv2: Conv2d::same3(store, &join(path, "conv2"), channels, channels)?,
            norm2: ChannelLayerNorm::new(store, &join(path, "norm2"), channels)?,
        })
    }

    /// Convolution layers of the residual branch, in order.
    pub fn branch_convs(&self) -> [&Conv2d; 2] {
        [&self.conv1, &self.conv2]
    }

    pub fn branch_norms(&self) -> [&ChannelLayerNorm; 2] {
        [&self.norm1, &self.norm2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?;
        Ok((y + x)?.relu()?)
    }
}

/// High-frequency features indexed by (scale, stage) with `1 <= scale <= stage <= 3`.
/// Scale `i` has `2^i * C` channels at `1 / 2^(i+1)` of the input resolution.
#[derive(Debug, Clone, Default)]
pub struct HfrGrid {
    entries: BTreeMap<(u8, u8), Tensor>,
}

impl HfrGrid {
    pub fn get(&self, scale: u8, stage: u8) -> Result<&Tensor> {
        self.entries
            .get(&(scale, stage))
            .ok_or_else(|| Error::Invariant(format!("missing high-frequency feature ({scale}, {stage})")))
    }

    pub fn insert(&mut self, scale: u8, stage: u8, t: Tensor) {
        self.entries.insert((scale, stage), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u8, u8), &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Grid positions in block order; block `k` produces entry `ENCODER_LAYOUT[k]`.
pub const ENCODER_LAYOUT: [(u8, u8); 6] = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

pub struct HighFreqEncoder {
    embed: HighFreqEmbed,
    /// Channel-doubling stride-2 convolutions entering scales 1, 2 and 3.
    downs: Vec<Conv2d>,
    blocks: Vec<EncoderBlock>,
}

impl HighFreqEncoder {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        let embed = HighFreqEmbed::new(store, &join(path, "embed"), channels)?;
        let downs = (1..=3u32)
            .map(|i| {
                let out = channels << i;
                Conv2d::new(store, &join(path, &format!("down{i}")), out / 2, out, 2, 2, 0)
            })
            .collect::<Result<_>>()?;
        let blocks = ENCODER_LAYOUT
            .iter()
            .enumerate()
            .map(|(k, &(i, _))| {
                EncoderBlock::new(store, &join(path, &format!("blocks.{}", k + 1)), channels << i)
            })
            .collect::<Result<_>>()?;
        Ok(Self { embed, downs, blocks })
    }

    pub fn embed(&self) -> &HighFreqEmbed {
        &self.embed
    }

    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    /// Residual composite to embedding `(B, C, H/2, W/2)`.
    pub fn embed_images(&self, images: &Tensor) -> Result<Tensor> {
        self.embed.forward(&laplacian_decompose(images)?.composite()?)
    }

    /// Runs the six blocks on an embedding.
    ///
    /// Each scale starts by downsampling the previous scale's first-stage
    /// output (the embedding for scale 1), then chains its blocks.
    pub fn encode(&self, embedding: &Tensor) -> Result<HfrGrid> {
        let mut grid = HfrGrid::default();
        for (&(i, j), block) in ENCODER_LAYOUT.iter().zip(&self.blocks) {
            let input = if i == j {
                let source = if i == 1 { embedding } else { grid.get(i - 1, i - 1)? };
                self.downs[i as usize - 1].forward(source)?
            } else {
                grid.get(i, j - 1)?.clone()
            };
            grid.insert(i, j, block.forward(&input)?);
        }
        Ok(grid)
    }

    pub fn forward(&self, images: &Tensor) -> Result<HfrGrid> {
        self.encode(&self.embed_images(images)?)
    }
}
