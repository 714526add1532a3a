//! The frequency-aware segmentation network.
//!
//! A transformer over 16x16 patches supplies low-frequency semantics, a
//! Laplacian residual encoder supplies high-frequency detail, and window
//! cross-attention merges the two per scale before a bottom-up decoder.
//! All tensors are NCHW.

mod checkpoint;
mod dump;
mod fusion;
mod heads;
mod hfde;
mod laplacian;
mod layers;
mod lfse;
mod params;
mod resample;

pub use candle_core::DType;
use candle_core::Tensor;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dump::{feature_grid, write_feature_grids};
pub use fusion::{
    fusion_schedule, progressive_fuse_with, window_partition, window_restore, FusionKind, ProgressiveFusion,
    WindowCrossAttention,
};
pub use heads::{Decoder, ScribbleHead};
pub use hfde::{EncoderBlock, HfrGrid, HighFreqEmbed, HighFreqEncoder, ENCODER_LAYOUT};
pub use laplacian::{laplacian_decompose, LaplacianPyramid, PYRAMID_LEVELS};
pub use layers::{sigmoid, softmax_last, BatchNorm2d, ChannelLayerNorm, Conv2d, ConvBnRelu, LayerNorm, Linear, Mode};
pub use lfse::{LowFreqEncoder, PATCH_SIZE};
pub use params::{Buffer, Init, ParamStore};
pub use resample::{bilinear_weights, downsample_area, resize_bilinear};

use crate::error::{Error, Result};
use crate::raster::ColorImage;

const IMAGE_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGE_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Square input side; a multiple of 16.
    pub image_size: usize,
    /// Transformer width.
    pub embed_dim: usize,
    /// Width of the high-frequency embedding; scale `i` uses `2^i` times this.
    pub hf_channels: usize,
    pub transformer_layers: usize,
    /// Attention heads inside the transformer.
    pub transformer_heads: usize,
    pub window_size: usize,
    /// Attention heads of the window cross-attention.
    pub fusion_heads: usize,
    pub decoder_channels: usize,
}

impl NetworkConfig {
    pub fn full() -> Self {
        Self {
            image_size: 384,
            embed_dim: 768,
            hf_channels: 32,
            transformer_layers: 12,
            transformer_heads: 12,
            window_size: 8,
            fusion_heads: 4,
            decoder_channels: 64,
        }
    }

    pub fn toy() -> Self {
        Self {
            image_size: 64,
            embed_dim: 64,
            hf_channels: 8,
            transformer_layers: 2,
            transformer_heads: 4,
            window_size: 4,
            fusion_heads: 4,
            decoder_channels: 16,
        }
    }

    /// Spatial side of level `i` (1, 2 or 3).
    pub fn level_size(&self, level: u8) -> usize {
        self.image_size >> (level + 1)
    }

    pub fn level_channels(&self, level: u8) -> usize {
        self.hf_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % PATCH_SIZE != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {PATCH_SIZE}",
                self.image_size
            )));
        }
        if self.embed_dim == 0 || self.hf_channels == 0 || self.decoder_channels == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.transformer_heads == 0 || self.embed_dim % self.transformer_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by transformer_heads {}",
                self.embed_dim, self.transformer_heads
            )));
        }
        if self.fusion_heads == 0 || self.level_channels(1) % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "level width {} is not divisible by fusion_heads {}",
                self.level_channels(1),
                self.fusion_heads
            )));
        }
        for level in 1..=3 {
            let side = self.level_size(level);
            if self.window_size == 0 || side % self.window_size != 0 {
                return Err(Error::Config(format!(
                    "window_size {} does not divide the level-{level} extent {side}",
                    self.window_size
                )));
            }
        }
        Ok(())
    }
}

/// Structural switches for ablation variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureFlags {
    /// Without the high-frequency branch every fused level is the projected
    /// low-frequency map.
    pub use_hfde: bool,
    /// Without window attention, fusion adds the high-frequency feature.
    pub use_wcapf: bool,
    /// Levels that take part in fusion; others pass the projected map through.
    pub fusion_levels: Vec<u8>,
}

impl Default for ArchitectureFlags {
    fn default() -> Self {
        Self {
            use_hfde: true,
            use_wcapf: true,
            fusion_levels: vec![1, 2, 3],
        }
    }
}

impl ArchitectureFlags {
    pub fn validate(&self) -> Result<()> {
        if self.fusion_levels.is_empty() {
            return Err(Error::Config("fusion_levels must not be empty".into()));
        }
        if let Some(bad) = self.fusion_levels.iter().find(|l| !(1..=3).contains(*l)) {
            return Err(Error::Config(format!("fusion level {bad} is outside 1..=3")));
        }
        Ok(())
    }
}

/// Side outputs are indexed by level minus one; level 1 is the finest.
pub struct NetworkOutputs {
    /// Foreground probability `(B, 1, H, W)` per level.
    pub seg: [Tensor; 3],
    /// Scribble probability `(B, 1, H, W)` per level.
    pub scrib: [Tensor; 3],
    /// Fused features per level.
    pub fused: [Tensor; 3],
    /// Transformer output `(B, D, H/16, W/16)`.
    pub low_freq: Tensor,
}

pub struct FadeNet {
    config: NetworkConfig,
    flags: ArchitectureFlags,
    store: ParamStore,
    low_freq: LowFreqEncoder,
    high_freq: Option<HighFreqEncoder>,
    fusion: ProgressiveFusion,
    scribble_heads: Vec<ScribbleHead>,
    decoder: Decoder,
}

impl FadeNet {
    pub fn new(config: NetworkConfig, flags: ArchitectureFlags, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        flags.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let c = config.hf_channels;
        let low_freq = LowFreqEncoder::new(
            &mut store,
            "lfse",
            config.image_size,
            config.embed_dim,
            config.transformer_layers,
            config.transformer_heads,
        )?;
        let high_freq = if flags.use_hfde {
            Some(HighFreqEncoder::new(&mut store, "hfde", c)?)
        } else {
            None
        };
        let levels: &[u8] = if flags.use_hfde { &flags.fusion_levels } else { &[] };
        let kind = if flags.use_wcapf { FusionKind::Attention } else { FusionKind::Addition };
        let fusion = ProgressiveFusion::new(
            &mut store,
            "fusion",
            config.embed_dim,
            c,
            config.fusion_heads,
            config.window_size,
            levels,
            kind,
        )?;
        let scribble_heads = (1..=3u8)
            .map(|i| ScribbleHead::new(&mut store, &format!("scrib_head{i}"), config.level_channels(i)))
            .collect::<Result<_>>()?;
        let decoder = Decoder::new(&mut store, "decoder", c, config.decoder_channels)?;
        Ok(Self {
            config,
            flags,
            store,
            low_freq,
            high_freq,
            fusion,
            scribble_heads,
            decoder,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn flags(&self) -> &ArchitectureFlags {
        &self.flags
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    pub fn low_freq_encoder(&self) -> &LowFreqEncoder {
        &self.low_freq
    }

    pub fn high_freq_encoder(&self) -> Option<&HighFreqEncoder> {
        self.high_freq.as_ref()
    }

    pub fn fusion(&self) -> &ProgressiveFusion {
        &self.fusion
    }

    fn normalize(&self, images: &Tensor) -> Result<Tensor> {
        let dev = images.device();
        let mean = Tensor::new(&IMAGE_MEAN, dev)?.to_dtype(images.dtype())?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGE_STD, dev)?.to_dtype(images.dtype())?.reshape((1, 3, 1, 1))?;
        Ok(images.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    /// Runs the network on `(B, 3, H, W)` images with values in `[0, 1]`.
    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<NetworkOutputs> {
        let (_, ch, h, w) = images.dims4()?;
        let side = self.config.image_size;
        if ch != 3 || h != side || w != side {
            return Err(Error::dimension(format!("(B, 3, {side}, {side})"), format!("{:?}", images.dims())));
        }
        let x = self.normalize(&images.to_dtype(self.store.dtype())?)?;
        let low_freq = self.low_freq.forward(&x)?;
        let sizes = [1u8, 2, 3].map(|i| self.config.level_size(i));
        let projected = self.fusion.project_levels(&low_freq, sizes)?;
        let fused = match &self.high_freq {
            Some(hf) => self.fusion.fuse(&hf.forward(&x)?, projected)?,
            None => projected,
        };
        let mut scrib = Vec::with_capacity(3);
        for (head, f) in self.scribble_heads.iter().zip(&fused) {
            scrib.push(head.forward(f, side, mode)?);
        }
        let seg = self.decoder.forward(&fused, side, mode)?;
        Ok(NetworkOutputs {
            seg,
            scrib: scrib.try_into().expect("three levels"),
            fused,
            low_freq,
        })
    }

    /// Finest-level foreground probability for one image, as `(H, W)`.
    pub fn predict(&self, image: &ColorImage) -> Result<Array2<f64>> {
        let batch = batch_from_images(&[image], self.config.image_size, self.store.dtype())?;
        let out = self.forward(&batch, Mode::Eval)?;
        tensor_to_map(&out.seg[0].get(0)?.get(0)?)
    }
}

/// Stacks images into `(B, 3, S, S)` in `[0, 1]`, resizing when needed.
pub fn batch_from_images(images: &[&ColorImage], size: usize, dtype: DType) -> Result<Tensor> {
    let mut items = Vec::with_capacity(images.len());
    for img in images {
        let img = if img.dim() == (size, size) {
            (*img).clone()
        } else {
            img.resized(size, size)
        };
        let data = img.to_unit_f32();
        let t = Tensor::from_vec(data.iter().copied().collect::<Vec<f32>>(), (size, size, 3), &candle_core::Device::Cpu)?
            .permute((2, 0, 1))?;
        items.push(t);
    }
    if items.is_empty() {
        return Err(Error::Data("empty image batch".into()));
    }
    Ok(Tensor::stack(&items, 0)?.to_dtype(dtype)?.contiguous()?)
}

/// `(H, W)` tensor to an `f64` array.
pub fn tensor_to_map(t: &Tensor) -> Result<Array2<f64>> {
    let (h, w) = t.dims2()?;
    let values = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::Invariant(e.to_string()))
}

/// `(H, W)` array to a tensor of the given dtype.
pub fn map_to_tensor(map: &Array2<f64>, dtype: DType) -> Result<Tensor> {
    let (h, w) = map.dim();
    Ok(Tensor::from_vec(map.iter().copied().collect::<Vec<f64>>(), (h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
