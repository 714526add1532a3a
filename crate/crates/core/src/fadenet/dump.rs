use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Tiles the channels of one `(C, h, w)` feature map into a near-square
/// grid, each channel min-max scaled to 0..=255 independently. At most
/// `max_channels` channels are shown.
pub fn feature_grid(features: &Tensor, max_channels: usize) -> Result<GrayImage> {
    let (c, h, w) = features.dims3()?;
    let shown = c.min(max_channels.max(1));
    let cols = (shown as f64).sqrt().ceil() as usize;
    let rows = shown.div_ceil(cols);
    let data = features.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut pixels = vec![0u8; rows * h * cols * w];
    let stride = cols * w;
    for ch in 0..shown {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (gr, gc) = (ch / cols, ch % cols);
        for r in 0..h {
            for col in 0..w {
                let v = (plane[r * w + col] - lo) / span;
                pixels[(gr * h + r) * stride + gc * w + col] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    GrayImage::new(
        ndarray::Array2::from_shape_vec((rows * h, cols * w), pixels)
            .map_err(|e| Error::Invariant(e.to_string()))?,
    )
}

/// Writes `<stem>_level<i>.png` for each fused level of the first batch item.
pub fn write_feature_grids(fused: &[Tensor; 3], dir: &Path, stem: &str, max_channels: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(3);
    for (i, f) in fused.iter().enumerate() {
        let grid = feature_grid(&f.get(0)?, max_channels)?;
        let path = dir.join(format!("{stem}_level{}.png", i + 1));
        let (h, w) = grid.dim();
        let buf = image::GrayImage::from_raw(w as u32, h as u32, grid.pixels().iter().copied().collect())
            .ok_or_else(|| Error::Invariant("feature grid buffer size".into()))?;
        buf.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
