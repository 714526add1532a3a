use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetLayout;
use crate::error::{Error, Result};
use crate::raster::{load_mask, ColorImage, Mask, ScribbleAnnotation};

/// Extensions accepted for input images, lower case.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Records need scribbles.
    Train,
    /// Records need ground-truth masks.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: String,
    pub image: PathBuf,
    pub scribble: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Problems found during ingestion; a flagged record is not usable.
    pub issues: Vec<String>,
}

impl DatasetRecord {
    pub fn is_usable(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub root: PathBuf,
    /// Sorted by image id.
    pub records: Vec<DatasetRecord>,
}

impl DatasetManifest {
    pub fn usable(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.is_usable())
    }

    pub fn flagged(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| !r.is_usable())
    }
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Files of `dir` with an image extension, keyed by stem. A missing
/// directory yields an empty map.
fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut out: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let usable = path.is_file() && extension_of(&path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
        if !usable {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_default().push(path);
        }
    }
    for paths in out.values_mut() {
        paths.sort();
    }
    Ok(out)
}

fn dims_of(path: &Path) -> std::result::Result<(usize, usize), String> {
    image::image_dimensions(path)
        .map(|(w, h)| (h as usize, w as usize))
        .map_err(|e| format!("unreadable {}: {e}", path.display()))
}

/// Pairs every image under `root/<layout.images>` with its scribble and
/// ground-truth files by stem, checking that they exist, decode, and share
/// the image's size. Problems flag the record instead of failing.
pub fn ingest_dataset(root: impl AsRef<Path>, layout: &DatasetLayout, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let images = files_by_stem(&root.join(&layout.images))?;
    if images.is_empty() {
        return Err(Error::Data(format!("no images under {}", root.join(&layout.images).display())));
    }
    let scribbles = files_by_stem(&root.join(&layout.scribbles))?;
    let truths = files_by_stem(&root.join(&layout.ground_truth))?;
    let mut records = Vec::with_capacity(images.len());
    for (stem, paths) in images {
        let mut issues = Vec::new();
        if paths.len() > 1 {
            issues.push(format!("{} images share the stem", paths.len()));
        }
        let image = paths[0].clone();
        let dims = dims_of(&image).map_err(|e| issues.push(e)).ok();
        let mut companion = |found: Option<&Vec<PathBuf>>, what: &str, required: bool| -> Option<PathBuf> {
            let Some(path) = found.map(|p| p[0].clone()) else {
                if required {
                    issues.push(format!("missing {what}"));
                }
                return None;
            };
            match (dims_of(&path), dims) {
                (Err(e), _) => issues.push(e),
                (Ok(d), Some(expected)) if d != expected => {
                    issues.push(format!("{what} is {d:?} but the image is {expected:?}"))
                }
                _ => {}
            }
            Some(path)
        };
        let scribble = companion(scribbles.get(&stem), "scribble", split == Split::Train);
        let ground_truth = companion(truths.get(&stem), "ground truth", split == Split::Eval);
        for issue in &issues {
            tracing::warn!(image_id = %stem, %issue, "dataset record flagged");
        }
        records.push(DatasetRecord {
            image_id: stem,
            image,
            scribble,
            ground_truth,
            issues,
        });
    }
    Ok(DatasetManifest {
        split,
        root: root.to_path_buf(),
        records,
    })
}

/// Decoded inputs of one record.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub image_id: String,
    pub image: ColorImage,
    pub scribbles: Option<ScribbleAnnotation>,
    pub ground_truth: Option<Mask>,
}

impl DatasetRecord {
    pub fn load(&self) -> Result<LoadedRecord> {
        if !self.is_usable() {
            return Err(Error::Data(format!("{}: {}", self.image_id, self.issues.join("; "))));
        }
        Ok(LoadedRecord {
            image_id: self.image_id.clone(),
            image: ColorImage::load(&self.image)?,
            scribbles: self.scribble.as_ref().map(ScribbleAnnotation::load).transpose()?,
            ground_truth: self.ground_truth.as_ref().map(load_mask).transpose()?,
        })
    }
}
