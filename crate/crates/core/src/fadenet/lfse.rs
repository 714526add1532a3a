//! Low-frequency semantic branch: a plain vision transformer over 16x16 patches.

use candle_core::{Tensor, Var};

use super::layers::{softmax_last, Conv2d, LayerNorm, Linear};
use super::params::{join, Init, ParamStore};
use crate::error::{Error, Result};

pub const PATCH_SIZE: usize = 16;

struct SelfAttention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl SelfAttention {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let out = softmax_last(&scores)?.matmul(&v)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
        self.proj.forward(&out)
    }
}

struct TransformerBlock {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    fn new(store: &mut ParamStore, path: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &join(path, "norm1"), dim)?,
            attn: SelfAttention {
                qkv: Linear::new(store, &join(path, "attn.qkv"), dim, 3 * dim)?,
                proj: Linear::new(store, &join(path, "attn.proj"), dim, dim)?,
                heads,
            },
            norm2: LayerNorm::new(store, &join(path, "norm2"), dim)?,
            fc1: Linear::new(store, &join(path, "mlp.fc1"), dim, 4 * dim)?,
            fc2: Linear::new(store, &join(path, "mlp.fc2"), 4 * dim, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&x)?)?.gelu_erf()?)?;
        Ok((x + mlp)?)
    }
}

pub struct LowFreqEncoder {
    patch_embed: Conv2d,
    pos_embed: Var,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    grid: usize,
    dim: usize,
}

impl LowFreqEncoder {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        image_size: usize,
        dim: usize,
        layers: usize,
        heads: usize,
    ) -> Result<Self> {
        if image_size % PATCH_SIZE != 0 {
            return Err(Error::dimension(
                format!("image size divisible by {PATCH_SIZE}"),
                image_size,
            ));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {dim} is not divisible into {heads} heads"
            )));
        }
        let grid = image_size / PATCH_SIZE;
        Ok(Self {
            patch_embed: Conv2d::new(store, &join(path, "patch_embed"), 3, dim, PATCH_SIZE, PATCH_SIZE, 0)?,
            pos_embed: store.param(&join(path, "pos_embed"), &[1, grid * grid, dim], Init::Uniform(0.02))?,
            blocks: (0..layers)
                .map(|i| TransformerBlock::new(store, &join(path, &format!("blocks.{i}")), dim, heads))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, &join(path, "norm"), dim)?,
            grid,
            dim,
        })
    }

    pub fn patch_embed(&self) -> &Conv2d {
        &self.patch_embed
    }

    /// `(B, 3, H, W)` to `(B, D, H/16, W/16)`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = images.dims4()?;
        if h != self.grid * PATCH_SIZE || w != self.grid * PATCH_SIZE {
            return Err(Error::dimension(
                format!("{0}x{0} input", self.grid * PATCH_SIZE),
                format!("{h}x{w}"),
            ));
        }
        let tokens = self
            .patch_embed
            .forward(images)?
            .flatten_from(2)?
            .transpose(1, 2)?;
        let mut x = tokens.broadcast_add(self.pos_embed.as_tensor())?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let x = self.norm.forward(&x)?;
        Ok(x.transpose(1, 2)?
            .contiguous()?
            .reshape((b, self.dim, self.grid, self.grid))?)
    }
}
