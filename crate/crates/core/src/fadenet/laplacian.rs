use candle_core::Tensor;

use super::resample::{downsample_area, resize_bilinear};
use crate::error::{Error, Result};

pub const PYRAMID_LEVELS: usize = 4;

/// Band-pass decomposition of an image batch.
///
/// `lowpass[k]` is the image after `k` area halvings (`lowpass[0]` is the
/// input). `residuals[k] = lowpass[0] - up(lowpass[k + 1])`, where `up`
/// resizes bilinearly back to full resolution.
pub struct LaplacianPyramid {
    pub lowpass: Vec<Tensor>,
    pub residuals: Vec<Tensor>,
}

impl LaplacianPyramid {
    /// All residuals stacked along channels: `(B, 3 * levels, H, W)`.
    pub fn composite(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&self.residuals, 1)?)
    }

    /// `residuals[k] + up(lowpass[k + 1])`, which equals the input.
    pub fn reconstruct(&self, k: usize) -> Result<Tensor> {
        let (_, _, h, w) = self.lowpass[0].dims4()?;
        Ok((&self.residuals[k] + resize_bilinear(&self.lowpass[k + 1], h, w)?)?)
    }
}

/// Decomposes an NCHW batch whose spatial extents are divisible by 16.
pub fn laplacian_decompose(images: &Tensor) -> Result<LaplacianPyramid> {
    let (_, _, h, w) = images.dims4()?;
    let unit = 1 << PYRAMID_LEVELS;
    if h % unit != 0 || w % unit != 0 {
        return Err(Error::dimension(
            format!("extents divisible by {unit}"),
            format!("{h}x{w}"),
        ));
    }
    let mut lowpass = vec![images.clone()];
    for k in 0..PYRAMID_LEVELS {
        lowpass.push(downsample_area(&lowpass[k])?);
    }
    let residuals = lowpass[1..]
        .iter()
        .map(|l| Ok((images - resize_bilinear(l, h, w)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(LaplacianPyramid { lowpass, residuals })
}
