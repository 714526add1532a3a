//! Supervision targets and training losses.
//!
//! Loss functions take probability tensors shaped `(B, 1, H, W)` and return
//! scalar tensors so they can be differentiated. Every logarithm sees its
//! argument clamped to `[EPS, 1 - EPS]`.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dim, mask_union, Mask, ScribbleAnnotation, ScribbleLabel};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the scribble-likelihood loss in the total.
    pub alpha: f64,
    /// Weight of the debiasing loss in the total.
    pub beta: f64,
    /// Weight of unscribbled pixels in the scribble-likelihood loss.
    pub unlabeled_weight: f64,
    /// Focusing exponent of the debiasing loss.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.5,
            unlabeled_weight: 0.02,
            gamma: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.unlabeled_weight, self.gamma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// How the debiasing loss scores a scribble pixel's segmentation confidence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasForm {
    /// Foreground scribbles score `p_seg`, background scribbles `1 - p_seg`.
    #[default]
    ClassConditional,
    /// Every scribble pixel scores `p_seg`.
    Literal,
}

/// What the segmentation outputs are trained against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Pseudo masks only; the scribble losses are disabled.
    Mask,
    /// Pseudo masks overridden by dilated scribbles.
    #[default]
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub supervision: Supervision,
    /// When false the scribble head is not trained and both scribble terms vanish.
    #[serde(default = "yes")]
    pub use_debias: bool,
    #[serde(default)]
    pub debias_form: DebiasForm,
}

fn yes() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            supervision: Supervision::Mix,
            use_debias: true,
            debias_form: DebiasForm::ClassConditional,
        }
    }
}

impl LossConfig {
    fn scribble_terms_active(&self) -> bool {
        self.use_debias && self.supervision == Supervision::Mix
    }
}

/// Per-image training target.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget {
    /// Dense target in `{0, 1}`.
    pub mixed: Array2<f32>,
    /// Undilated scribble labels.
    pub polarity: Array2<ScribbleLabel>,
    /// Pixels whose dilated foreground and background scribbles overlapped.
    pub conflicts: usize,
}

impl SupervisionTarget {
    /// True where a scribble of either polarity was drawn.
    pub fn scribbled(&self) -> Mask {
        self.polarity.mapv(|l| l.is_scribble())
    }

    pub fn flipped_horizontally(&self) -> Self {
        let mut mixed = self.mixed.clone();
        mixed.invert_axis(ndarray::Axis(1));
        let mut polarity = self.polarity.clone();
        polarity.invert_axis(ndarray::Axis(1));
        Self {
            mixed: mixed.as_standard_layout().to_owned(),
            polarity: polarity.as_standard_layout().to_owned(),
            conflicts: self.conflicts,
        }
    }
}

/// Pixels within Euclidean distance `radius` of a set pixel.
pub fn dilate_disk(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
        .filter(|(dr, dc)| dr * dr + dc * dc <= r * r)
        .collect();
    let mut out = Mask::from_elem((h, w), false);
    for ((row, col), _) in mask.indexed_iter().filter(|(_, &m)| m) {
        for &(dr, dc) in &offsets {
            let (rr, cc) = (row as isize + dr, col as isize + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                out[[rr as usize, cc as usize]] = true;
            }
        }
    }
    out
}

/// Union of the accepted pseudo masks, then dilated background scribbles set
/// to 0, then dilated foreground scribbles set to 1.
pub fn build_mixed_target(
    pseudo_masks: &[Mask],
    scribbles: &ScribbleAnnotation,
    dilation_radius: usize,
) -> Result<SupervisionTarget> {
    let dim = scribbles.dim();
    for m in pseudo_masks {
        ensure_same_dim("pseudo mask", dim, m.dim())?;
    }
    let union = mask_union(dim, pseudo_masks);
    let fg = dilate_disk(&scribbles.mask_of(ScribbleLabel::Foreground), dilation_radius);
    let bg = dilate_disk(&scribbles.mask_of(ScribbleLabel::Background), dilation_radius);
    let mut conflicts = 0;
    let mixed = Array2::from_shape_fn(dim, |ix| {
        if fg[ix] && bg[ix] {
            conflicts += 1;
        }
        if fg[ix] {
            1.0
        } else if bg[ix] {
            0.0
        } else if union[ix] {
            1.0
        } else {
            0.0
        }
    });
    if conflicts > 0 {
        tracing::warn!(conflicts, "dilated foreground and background scribbles overlap; foreground kept");
    }
    Ok(SupervisionTarget {
        mixed,
        polarity: scribbles.labels().to_owned(),
        conflicts,
    })
}

/// Target for mask-only supervision: the union of pseudo masks.
pub fn build_mask_target(pseudo_masks: &[Mask], scribbles: &ScribbleAnnotation) -> Result<SupervisionTarget> {
    let dim = scribbles.dim();
    for m in pseudo_masks {
        ensure_same_dim("pseudo mask", dim, m.dim())?;
    }
    Ok(SupervisionTarget {
        mixed: mask_union(dim, pseudo_masks).mapv(|m| if m { 1.0 } else { 0.0 }),
        polarity: scribbles.labels().to_owned(),
        conflicts: 0,
    })
}

/// A batch of targets as `(B, 1, H, W)` tensors.
pub struct TargetBatch {
    pub mixed: Tensor,
    pub scribbled: Tensor,
    pub foreground: Tensor,
    pub background: Tensor,
}

impl TargetBatch {
    pub fn from_targets(targets: &[&SupervisionTarget], dtype: DType) -> Result<Self> {
        let first = targets
            .first()
            .ok_or_else(|| Error::Data("empty target batch".into()))?;
        let (h, w) = first.mixed.dim();
        let n = targets.len();
        let mut mixed = Vec::with_capacity(n * h * w);
        let mut fg = Vec::with_capacity(n * h * w);
        let mut bg = Vec::with_capacity(n * h * w);
        for t in targets {
            ensure_same_dim("target", (h, w), t.mixed.dim())?;
            mixed.extend(t.mixed.iter().map(|&v| v as f64));
            fg.extend(t.polarity.iter().map(|&l| (l == ScribbleLabel::Foreground) as u8 as f64));
            bg.extend(t.polarity.iter().map(|&l| (l == ScribbleLabel::Background) as u8 as f64));
        }
        let make = |v: Vec<f64>| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (n, 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
        };
        let foreground = make(fg)?;
        let background = make(bg)?;
        Ok(Self {
            mixed: make(mixed)?,
            scribbled: (&foreground + &background)?,
            foreground,
            background,
        })
    }
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(EPS, 1.0 - EPS)?)
}

/// Sum over all but the batch dimension: `(B, ...)` to `(B,)`.
fn per_image_sum(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.sum(1)?)
}

/// Weighted binary cross-entropy between scribble likelihood and the
/// scribbled/unscribbled label, averaged over pixels.
pub fn scribble_loss(p_scrib: &Tensor, scribbled: &Tensor, unlabeled_weight: f64) -> Result<Tensor> {
    let p = clamp_prob(p_scrib)?;
    let pos = (scribbled * p.log()?)?;
    let neg = ((1.0 - scribbled)? * (1.0 - &p)?.log()?)?;
    Ok((pos + (neg * unlabeled_weight)?)?.mean_all()?.neg()?)
}

/// Focal-style loss on scribble pixels, modulated jointly by scribble
/// likelihood and segmentation confidence `q`:
/// `-(1 - p_scrib * q)^gamma * log q`, averaged over each image's scribble
/// pixels, then over images. Images without scribbles contribute 0.
pub fn debias_loss(
    p_scrib: &Tensor,
    p_seg: &Tensor,
    foreground: &Tensor,
    background: &Tensor,
    gamma: f64,
    form: DebiasForm,
) -> Result<Tensor> {
    let p_seg = clamp_prob(p_seg)?;
    let p_scrib = clamp_prob(p_scrib)?;
    let scribbled = (foreground + background)?;
    let q = match form {
        DebiasForm::ClassConditional => ((foreground * &p_seg)? + (background * (1.0 - &p_seg)?)?)?,
        DebiasForm::Literal => (&scribbled * &p_seg)?,
    };
    // Unscribbled pixels get q = 1 so their log term is exactly zero.
    let q = (q + (1.0 - &scribbled)?)?.clamp(EPS, 1.0)?;
    let base = (1.0 - (&p_scrib * &q)?)?.clamp(EPS, 1.0)?;
    let modulation = if gamma == 0.0 { base.ones_like()? } else { base.powf(gamma)? };
    let terms = (modulation * q.log()?)?.neg()?;
    let counts = per_image_sum(&scribbled)?;
    let sums = per_image_sum(&(terms * &scribbled)?)?;
    let counts_vec = counts.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if counts_vec.iter().any(|&c| c == 0.0) {
        tracing::warn!("image without scribble pixels; its debiasing loss is 0");
    }
    let safe = counts.clamp(1.0, f64::INFINITY)?;
    Ok((sums / safe)?.mean_all()?)
}

/// Binary cross-entropy plus smoothed IoU loss, per image, averaged.
pub fn cod_loss(p_seg: &Tensor, target: &Tensor) -> Result<Tensor> {
    let p = clamp_prob(p_seg)?;
    let bce = ((target * p.log()?)? + ((1.0 - target)? * (1.0 - &p)?.log()?)?)?
        .mean_all()?
        .neg()?;
    let inter = per_image_sum(&(p_seg * target)?)?;
    let union = ((per_image_sum(p_seg)? + per_image_sum(target)?)? - &inter)?;
    let iou = (1.0 - ((inter + 1.0)? / (union + 1.0)?)?)?.mean_all()?;
    Ok((bce + iou)?)
}

/// Per-level loss values for logging; level 1 first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cod: [f64; 3],
    pub scrib: [f64; 3],
    pub debias: [f64; 3],
    pub total: f64,
}

/// Sum over levels of `cod + alpha * scrib + beta * debias`.
pub fn total_loss(
    seg: &[Tensor; 3],
    scrib: &[Tensor; 3],
    target: &TargetBatch,
    config: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let w = &config.weights;
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Tensor> = None;
    for k in 0..3 {
        let cod = cod_loss(&seg[k], &target.mixed)?;
        breakdown.cod[k] = cod.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let mut level = cod;
        if config.scribble_terms_active() {
            let s = scribble_loss(&scrib[k], &target.scribbled, w.unlabeled_weight)?;
            let d = debias_loss(&scrib[k], &seg[k], &target.foreground, &target.background, w.gamma, config.debias_form)?;
            breakdown.scrib[k] = s.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            breakdown.debias[k] = d.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            level = ((level + (s * w.alpha)?)? + (d * w.beta)?)?;
        }
        total = Some(match total {
            None => level,
            Some(t) => (t + level)?,
        });
    }
    let total = total.expect("three levels");
    breakdown.total = total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, 1, 1, v.len()), &Device::Cpu).unwrap()
    }

    fn scalar(x: Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn scribble_loss_closed_forms() {
        assert!(scalar(scribble_loss(&t(&[1.0, 1.0]), &t(&[1.0, 1.0]), 0.02).unwrap()) < 1e-6);
        let one = scalar(scribble_loss(&t(&[0.5]), &t(&[1.0]), 0.02).unwrap());
        assert!((one - 2f64.ln()).abs() < 1e-12);
        let zero = scalar(scribble_loss(&t(&[0.5]), &t(&[0.0]), 0.02).unwrap());
        assert!((zero - 0.02 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn debias_closed_form() {
        let v = scalar(debias_loss(&t(&[1.0]), &t(&[0.5]), &t(&[1.0]), &t(&[0.0]), 0.9, DebiasForm::ClassConditional).unwrap());
        let expected = 0.5f64.powf(0.9) * 2f64.ln();
        assert!((v - expected).abs() < 1e-6, "{v} vs {expected}");
        assert!((v - 0.3714).abs() < 1e-4);
    }

    #[test]
    fn debias_without_scribbles_is_zero() {
        let v = scalar(debias_loss(&t(&[0.3, 0.6]), &t(&[0.2, 0.9]), &t(&[0.0, 0.0]), &t(&[0.0, 0.0]), 0.9, DebiasForm::ClassConditional).unwrap());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn dilation_radius_one_is_a_plus() {
        let mut m = Mask::from_elem((5, 5), false);
        m[[2, 2]] = true;
        let d = dilate_disk(&m, 1);
        let set: Vec<_> = d.indexed_iter().filter(|(_, &v)| v).map(|(ix, _)| ix).collect();
        assert_eq!(set, vec![(1, 2), (2, 1), (2, 2), (2, 3), (3, 2)]);
    }
}
