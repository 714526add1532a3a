//! Raster containers shared by every stage: intensity images, colour images,
//! scribble annotations and binary masks, plus their on-disk codecs.

use std::path::Path;

use image::imageops::FilterType;
use ndarray::{Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary mask, `true` = foreground.
pub type Mask = Array2<bool>;

/// Single-channel 8-bit intensity image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pixels: Array2<u8>,
}

impl GrayImage {
    pub fn new(pixels: Array2<u8>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::dimension("non-empty image", format!("{h}x{w}")));
        }
        Ok(Self { pixels })
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> u8) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn pixels(&self) -> ArrayView2<'_, u8> {
        self.pixels.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// 8-bit RGB image stored as `(height, width, 3)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    data: Array3<u8>,
}

impl ColorImage {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::dimension("(H, W, 3) with H, W >= 1", format!("({h}, {w}, {c})")));
        }
        Ok(Self { data })
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        let (h, w) = gray.dim();
        let px = gray.pixels();
        Self {
            data: Array3::from_shape_fn((h, w, 3), |(r, c, _)| px[[r, c]]),
        }
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.data.dim();
        (h, w)
    }

    /// ITU-R BT.601 luma, rounded to the nearest integer.
    pub fn to_gray(&self) -> GrayImage {
        let (h, w) = self.dim();
        let d = &self.data;
        let pixels = Array2::from_shape_fn((h, w), |(r, c)| {
            let y = 0.299 * f64::from(d[[r, c, 0]])
                + 0.587 * f64::from(d[[r, c, 1]])
                + 0.114 * f64::from(d[[r, c, 2]]);
            y.round().clamp(0.0, 255.0) as u8
        });
        GrayImage { pixels }
    }

    /// Channel-last float copy scaled to [0, 1].
    pub fn to_unit_f32(&self) -> Array3<f32> {
        self.data.mapv(|v| f32::from(v) / 255.0)
    }

    pub fn flipped_horizontally(&self) -> Self {
        let mut data = self.data.clone();
        data.invert_axis(ndarray::Axis(1));
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        if self.dim() == (height, width) {
            return self.clone();
        }
        let img = self.to_rgb_buffer();
        let out = image::imageops::resize(&img, width as u32, height as u32, FilterType::Triangle);
        Self::from_rgb_buffer(&out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Self::from_rgb_buffer(&img))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb_buffer().save(path.as_ref())?;
        Ok(())
    }

    fn to_rgb_buffer(&self) -> image::RgbImage {
        let (h, w) = self.dim();
        let raw: Vec<u8> = self.data.iter().copied().collect();
        image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches dimensions")
    }

    fn from_rgb_buffer(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = Array3::from_shape_vec((h as usize, w as usize, 3), img.as_raw().clone())
            .expect("rgb buffer has 3 channels");
        Self { data }
    }
}

/// Per-pixel scribble label. The numeric values are the on-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum ScribbleLabel {
    #[default]
    Unlabeled = 0,
    Foreground = 1,
    Background = 2,
}

impl ScribbleLabel {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Unlabeled),
            1 => Some(Self::Foreground),
            2 => Some(Self::Background),
            _ => None,
        }
    }

    pub fn is_scribble(self) -> bool {
        self != Self::Unlabeled
    }
}

/// Sparse foreground/background strokes over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleAnnotation {
    labels: Array2<ScribbleLabel>,
}

impl ScribbleAnnotation {
    pub fn new(labels: Array2<ScribbleLabel>) -> Result<Self> {
        let (h, w) = labels.dim();
        if h == 0 || w == 0 {
            return Err(Error::dimension("non-empty annotation", format!("{h}x{w}")));
        }
        Ok(Self { labels })
    }

    pub fn unlabeled(height: usize, width: usize) -> Self {
        Self {
            labels: Array2::from_elem((height, width), ScribbleLabel::Unlabeled),
        }
    }

    /// Decodes the {0, 1, 2} value map, rejecting any other value.
    pub fn from_codes(codes: ArrayView2<'_, u8>) -> Result<Self> {
        let mut labels = Array2::from_elem(codes.dim(), ScribbleLabel::Unlabeled);
        for ((r, c), &code) in codes.indexed_iter() {
            labels[[r, c]] = ScribbleLabel::from_code(code).ok_or_else(|| {
                Error::Data(format!("scribble value {code} at ({r}, {c}) is not in {{0, 1, 2}}"))
            })?;
        }
        Self::new(labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let codes = Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
            .expect("luma buffer matches dimensions");
        Self::from_codes(codes.view())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.dim();
        let raw: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        image::GrayImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer size matches dimensions")
            .save(path.as_ref())?;
        Ok(())
    }

    pub fn labels(&self) -> ArrayView2<'_, ScribbleLabel> {
        self.labels.view()
    }

    pub fn set(&mut self, row: usize, col: usize, label: ScribbleLabel) {
        self.labels[[row, col]] = label;
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn count(&self, label: ScribbleLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn mask_of(&self, label: ScribbleLabel) -> Mask {
        self.labels.mapv(|l| l == label)
    }

    pub fn flipped_horizontally(&self) -> Self {
        let mut labels = self.labels.clone();
        labels.invert_axis(ndarray::Axis(1));
        Self {
            labels: labels.as_standard_layout().into_owned(),
        }
    }

    /// Nearest-neighbour resize.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            labels: resize_nearest(self.labels.view(), height, width),
        }
    }
}

pub fn ensure_same_dim(what: &str, expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::dimension(
            format!("{what} of shape {expected:?}"),
            format!("{actual:?}"),
        ));
    }
    Ok(())
}

pub fn resize_nearest<T: Clone>(src: ArrayView2<'_, T>, height: usize, width: usize) -> Array2<T> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((height, width), |(r, c)| {
        let sr = ((r as f64 + 0.5) * h as f64 / height as f64).floor() as usize;
        let sc = ((c as f64 + 0.5) * w as f64 / width as f64).floor() as usize;
        src[[sr.min(h - 1), sc.min(w - 1)]].clone()
    })
}

/// Loads a mask image; any value above 127 is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let raw = Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .expect("luma buffer matches dimensions");
    Ok(raw.mapv(|v| v > 127))
}

/// Writes a mask as a single-channel 0/255 image.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = mask.dim();
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size matches dimensions")
        .save(path.as_ref())?;
    Ok(())
}

/// Writes a [0, 1] map as an 8-bit grey image.
pub fn save_probability_map(map: ArrayView2<'_, f32>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = map.dim();
    let raw: Vec<u8> = map
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size matches dimensions")
        .save(path.as_ref())?;
    Ok(())
}

pub fn mask_union<'a>(dim: (usize, usize), masks: impl IntoIterator<Item = &'a Mask>) -> Mask {
    let mut out = Mask::from_elem(dim, false);
    for m in masks {
        Zip::from(&mut out).and(m).for_each(|o, &v| *o |= v);
    }
    out
}
