use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Row-stochastic `(out, in)` matrix of 1-D bilinear interpolation with
/// half-pixel centres and edge clamping.
pub fn bilinear_weights(out_len: usize, in_len: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        m[o * in_len + i0] += 1.0 - frac;
        m[o * in_len + i1] += frac;
    }
    m
}

fn weights_tensor(out_len: usize, in_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(bilinear_weights(out_len, in_len), (out_len, in_len), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of an NCHW tensor; differentiable.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let rows = weights_tensor(height, h, x.dtype(), x.device())?.reshape((1, 1, height, h))?;
    let cols = weights_tensor(width, w, x.dtype(), x.device())?
        .t()?
        .reshape((1, 1, w, width))?;
    Ok(rows.broadcast_matmul(&x.contiguous()?)?.broadcast_matmul(&cols)?)
}

/// 2x2 mean pooling; both spatial extents must be even.
pub fn downsample_area(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dimension("even spatial extents", format!("{h}x{w}")));
    }
    Ok(x.avg_pool2d(2)?)
}
