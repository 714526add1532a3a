//! Window cross-attention between high-frequency queries and low-frequency
//! keys/values, applied progressively across scales.

use std::collections::BTreeMap;

use candle_core::Tensor;

use super::hfde::HfrGrid;
use super::layers::{softmax_last, Conv2d, Linear};
use super::params::{join, ParamStore};
use super::resample::resize_bilinear;
use crate::error::{Error, Result};

/// `(B, C, H, W)` to `(B * H/w * W/w, w * w, C)`, windows in raster order.
pub fn window_partition(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Config(format!(
            "window size {window} does not divide feature extent {h}x{w}"
        )));
    }
    let (nh, nw) = (h / window, w / window);
    Ok(x.permute((0, 2, 3, 1))?
        .reshape((b, nh, window, nw, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * nh * nw, window * window, c))?)
}

/// Inverse of [`window_partition`] for a target shape `(B, C, H, W)`.
pub fn window_restore(windows: &Tensor, window: usize, shape: (usize, usize, usize, usize)) -> Result<Tensor> {
    let (b, c, h, w) = shape;
    let (nh, nw) = (h / window, w / window);
    Ok(windows
        .reshape((b, nh, nw, window, window, c))?
        .permute((0, 5, 1, 3, 2, 4))?
        .contiguous()?
        .reshape((b, c, h, w))?)
}

pub struct WindowCrossAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    heads: usize,
    window: usize,
}

impl WindowCrossAttention {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &join(path, "query"), channels, channels)?,
            key: Linear::new(store, &join(path, "key"), channels, channels)?,
            value: Linear::new(store, &join(path, "value"), channels, channels)?,
            heads,
            window,
        })
    }

    pub fn value_projection(&self) -> &Linear {
        &self.value
    }

    /// Returns the fused map and the attention weights
    /// `(windows, heads, w*w, w*w)`.
    pub fn forward_with_weights(&self, high: &Tensor, low: &Tensor) -> Result<(Tensor, Tensor)> {
        if high.dims() != low.dims() {
            return Err(Error::dimension(format!("{:?}", high.dims()), format!("{:?}", low.dims())));
        }
        let shape = high.dims4()?;
        let c = shape.1;
        let hd = c / self.heads;
        let hw = window_partition(high, self.window)?;
        let lw = window_partition(low, self.window)?;
        let (n, t, _) = hw.dims3()?;
        let split = |x: Tensor| -> Result<Tensor> {
            Ok(x.reshape((n, t, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.query.forward(&hw)?)?;
        let k = split(self.key.forward(&lw)?)?;
        let v = split(self.value.forward(&lw)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let weights = softmax_last(&scores)?;
        let out = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((n, t, c))?;
        let fused = (window_restore(&out, self.window, shape)? + high)?;
        Ok((fused, weights))
    }

    pub fn forward(&self, high: &Tensor, low: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_weights(high, low)?.0)
    }
}

/// Fusion calls in execution order for the given levels: coarse levels
/// first, and within a level from stage 3 down to the level itself.
pub fn fusion_schedule(levels: &[u8]) -> Vec<(u8, u8)> {
    (1..=3u8)
        .rev()
        .filter(|i| levels.contains(i))
        .flat_map(|i| (i..=3).rev().map(move |j| (i, j)))
        .collect()
}

/// Runs the progressive schedule with an arbitrary fusion step.
///
/// `start[i - 1]` seeds level `i`; `fuse(i, j, current)` returns the next
/// value. Levels outside `levels` pass their seed through unchanged.
pub fn progressive_fuse_with<T, F>(start: [T; 3], levels: &[u8], mut fuse: F) -> Result<[T; 3]>
where
    F: FnMut(u8, u8, T) -> Result<T>,
{
    let mut slots = start.map(Some);
    for i in (1..=3u8).rev() {
        if !levels.contains(&i) {
            continue;
        }
        let mut current = slots[i as usize - 1].take().expect("each level visited once");
        for j in (i..=3).rev() {
            current = fuse(i, j, current)?;
        }
        slots[i as usize - 1] = Some(current);
    }
    Ok(slots.map(|s| s.expect("slot refilled")))
}

/// How a level's running low-frequency map absorbs a high-frequency feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Attention,
    Addition,
}

pub struct ProgressiveFusion {
    /// 1x1 projections from the transformer width to `2^i * C`, per level.
    projections: Vec<Conv2d>,
    attention: BTreeMap<(u8, u8), WindowCrossAttention>,
    levels: Vec<u8>,
    kind: FusionKind,
}

impl ProgressiveFusion {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        lf_dim: usize,
        hf_channels: usize,
        heads: usize,
        window: usize,
        levels: &[u8],
        kind: FusionKind,
    ) -> Result<Self> {
        let projections = (1..=3u32)
            .map(|i| Conv2d::pointwise(store, &join(path, &format!("project{i}")), lf_dim, hf_channels << i))
            .collect::<Result<_>>()?;
        let mut attention = BTreeMap::new();
        if kind == FusionKind::Attention {
            for (i, j) in fusion_schedule(levels) {
                let module = WindowCrossAttention::new(
                    store,
                    &join(path, &format!("attn{i}{j}")),
                    hf_channels << i,
                    heads,
                    window,
                )?;
                attention.insert((i, j), module);
            }
        }
        Ok(Self {
            projections,
            attention,
            levels: levels.to_vec(),
            kind,
        })
    }

    /// Resizes the low-frequency map to each level's resolution and projects
    /// it to that level's width. `sizes[i - 1]` is the spatial extent of level `i`.
    pub fn project_levels(&self, lfr: &Tensor, sizes: [usize; 3]) -> Result<[Tensor; 3]> {
        let mut out = Vec::with_capacity(3);
        for (proj, s) in self.projections.iter().zip(sizes) {
            out.push(proj.forward(&resize_bilinear(lfr, s, s)?)?);
        }
        Ok(out.try_into().expect("three levels"))
    }

    pub fn fuse(&self, grid: &HfrGrid, projected: [Tensor; 3]) -> Result<[Tensor; 3]> {
        progressive_fuse_with(projected, &self.levels, |i, j, current| {
            let high = grid.get(i, j)?;
            match self.kind {
                FusionKind::Attention => {
                    let module = self
                        .attention
                        .get(&(i, j))
                        .ok_or_else(|| Error::Invariant(format!("no fusion module for ({i}, {j})")))?;
                    module.forward(high, &current)
                }
                FusionKind::Addition => Ok((high + current)?),
            }
        })
    }

    pub fn attention(&self, level: u8, stage: u8) -> Option<&WindowCrossAttention> {
        self.attention.get(&(level, stage))
    }
}
