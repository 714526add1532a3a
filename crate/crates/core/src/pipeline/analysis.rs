use std::path::{Path, PathBuf};

use candle_core::DType;

use super::{AnalysisConfig, DatasetManifest};
use crate::debate::AcceptanceManifest;
use crate::error::{Error, Result};
use crate::fadenet::{batch_from_images, resize_bilinear, tensor_to_map, write_feature_grids, FadeNet, Mode};
use crate::metrics::{high_response_mask, DistanceHistogram, DistanceSource};
use crate::raster::{load_mask, mask_union, ColorImage, Mask};

/// Inputs to the boundary-distance analysis besides the dataset itself.
pub struct BiasSources<'a> {
    /// Accepted pseudo masks and the directory their paths are relative to.
    pub pseudo: Option<(&'a AcceptanceManifest, &'a Path)>,
    /// Network whose finest scribble head provides high-response pixels.
    pub network: Option<&'a FadeNet>,
}

/// Finest-level scribble probability resized to the image.
pub fn scribble_probability(net: &FadeNet, image: &ColorImage) -> Result<ndarray::Array2<f64>> {
    let batch = batch_from_images(&[image], net.config().image_size, DType::F32)?;
    let out = net.forward(&batch, Mode::Eval)?;
    let (h, w) = image.dim();
    let p = resize_bilinear(&out.scrib[0], h, w)?.get(0)?.get(0)?;
    Ok(tensor_to_map(&p)?.mapv(|v| v.clamp(0.0, 1.0)))
}

/// Relative boundary distances of scribble pixels, pseudo-mask pixels and
/// high-response predicted scribble pixels, each measured inside the
/// ground-truth objects. Records without a ground-truth file are skipped.
pub fn analyze_bias(dataset: &DatasetManifest, sources: &BiasSources<'_>, config: &AnalysisConfig) -> Result<DistanceHistogram> {
    let mut hist = DistanceHistogram::new(config.histogram_bins)?;
    for record in dataset.usable() {
        let loaded = record.load()?;
        let Some(gt) = loaded.ground_truth else {
            tracing::warn!(image_id = %record.image_id, "no ground truth; skipped in bias analysis");
            continue;
        };
        let id = record.image_id.as_str();
        if let Some(scribbles) = &loaded.scribbles {
            let drawn: Mask = scribbles.labels().mapv(|l| l.is_scribble());
            hist.record(id, DistanceSource::Scribble, &drawn, &gt)?;
        }
        if let Some((manifest, root)) = sources.pseudo {
            let masks = manifest
                .masks_for(id)
                .map(|e| load_mask(root.join(&e.mask_path)))
                .collect::<Result<Vec<_>>>()?;
            if !masks.is_empty() {
                hist.record(id, DistanceSource::Mask, &mask_union(gt.dim(), &masks), &gt)?;
            }
        }
        if let Some(net) = sources.network {
            let p = scribble_probability(net, &loaded.image)?;
            let high = high_response_mask(p.view(), config.high_response_percentile)?;
            hist.record(id, DistanceSource::PredictedScribble, &high, &gt)?;
        }
    }
    Ok(hist)
}

/// Writes `bias_histogram.csv` and `bias_histogram.json` into `dir`.
pub fn write_histogram(hist: &DistanceHistogram, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (dir.join("bias_histogram.csv"), hist.to_csv()),
        (dir.join("bias_histogram.json"), serde_json::to_string_pretty(hist)?),
    ];
    for (path, text) in &files {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Writes fused-feature grids of one image, one PNG per level.
pub fn dump_features(net: &FadeNet, image: &ColorImage, dir: &Path, stem: &str, max_channels: usize) -> Result<Vec<PathBuf>> {
    let batch = batch_from_images(&[image], net.config().image_size, DType::F32)?;
    let out = net.forward(&batch, Mode::Eval)?;
    write_feature_grids(&out.fused, dir, stem, max_channels)
}
