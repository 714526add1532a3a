use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::fadenet::{map_to_tensor, resize_bilinear, tensor_to_map, FadeNet};
use crate::metrics::{EvalPair, MetricScores};
use crate::raster::{ColorImage, Mask};

/// Anything that maps an image to a foreground probability map of the same size.
pub trait Predictor: Sync {
    fn predict(&self, image_id: &str, image: &ColorImage) -> Result<Array2<f64>>;
}

impl Predictor for FadeNet {
    fn predict(&self, _image_id: &str, image: &ColorImage) -> Result<Array2<f64>> {
        let map = FadeNet::predict(self, image)?;
        let (h, w) = image.dim();
        if map.dim() == (h, w) {
            return Ok(map);
        }
        let t = map_to_tensor(&map, candle_core::DType::F64)?.unsqueeze(0)?.unsqueeze(0)?;
        let resized = resize_bilinear(&t, h, w)?.squeeze(0)?.squeeze(0)?;
        Ok(tensor_to_map(&resized)?.mapv(|v| v.clamp(0.0, 1.0)))
    }
}

/// Returns stored maps by image id.
#[derive(Debug, Clone, Default)]
pub struct FixedPredictor {
    pub maps: HashMap<String, Array2<f64>>,
}

impl Predictor for FixedPredictor {
    fn predict(&self, image_id: &str, _image: &ColorImage) -> Result<Array2<f64>> {
        self.maps
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no prediction stored for {image_id}")))
    }
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image_id: String,
    pub image: ColorImage,
    pub ground_truth: Mask,
}

/// Loads every usable record that has a ground-truth mask.
pub fn load_eval_set(manifest: &DatasetManifest) -> Result<Vec<EvalSample>> {
    let mut out = Vec::new();
    for record in manifest.usable() {
        let loaded = record.load()?;
        let Some(gt) = loaded.ground_truth else {
            continue;
        };
        out.push(EvalSample {
            image_id: loaded.image_id,
            image: loaded.image,
            ground_truth: gt,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    #[serde(flatten)]
    pub scores: MetricScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub dataset: String,
    pub images: usize,
    pub mean: MetricScores,
    pub per_image: Vec<ImageScores>,
}

const CSV_HEADER: &str = "mae,s_measure,e_measure,weighted_f";

fn csv_scores(s: &MetricScores) -> String {
    format!("{:.6},{:.6},{:.6},{:.6}", s.mae, s.s_measure, s.e_measure, s.weighted_f)
}

impl MetricTable {
    /// `dataset,images,<metrics>` with one row.
    pub fn summary_csv(&self) -> String {
        format!("dataset,images,{CSV_HEADER}\n{},{},{}\n", self.dataset, self.images, csv_scores(&self.mean))
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = format!("image_id,{CSV_HEADER}\n");
        for row in &self.per_image {
            out.push_str(&format!("{},{}\n", row.image_id, csv_scores(&row.scores)));
        }
        out
    }

    /// Writes `metrics.json`, `metrics.csv` and `per_image.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("metrics.json", serde_json::to_string_pretty(self)?),
            ("metrics.csv", self.summary_csv()),
            ("per_image.csv", self.per_image_csv()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

impl fmt::Display for MetricTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>6} {:>8} {:>8} {:>8} {:>8}", "dataset", "images", "MAE", "S_m", "E_m", "wF")?;
        let m = &self.mean;
        write!(
            f,
            "{:<16} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            self.dataset, self.images, m.mae, m.s_measure, m.e_measure, m.weighted_f
        )
    }
}

/// Scores `predictor` on every sample and averages the four metrics.
pub fn evaluate(predictor: &dyn Predictor, samples: &[EvalSample], dataset: &str) -> Result<MetricTable> {
    if samples.is_empty() {
        return Err(Error::Data(format!("dataset {dataset} has no images with ground truth")));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let map = predictor.predict(&s.image_id, &s.image)?;
        pairs.push(EvalPair::new(map.view(), &s.ground_truth)?);
    }
    let per_image: Vec<ImageScores> = pairs
        .par_iter()
        .zip(samples)
        .map(|(p, s)| ImageScores {
            image_id: s.image_id.clone(),
            scores: MetricScores::of(p),
        })
        .collect();
    let scores: Vec<MetricScores> = per_image.iter().map(|r| r.scores).collect();
    let mean = MetricScores::average(&scores)?;
    Ok(MetricTable {
        dataset: dataset.to_string(),
        images: samples.len(),
        mean,
        per_image,
    })
}
