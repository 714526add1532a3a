use std::fmt::Write as _;

use ndarray::Array3;

use crate::error::Result;
use crate::prompting::{Polarity, PointPromptSet};
use crate::raster::{ensure_same_dim, ColorImage, Mask};

const BOUNDARY: [u8; 3] = [255, 0, 0];
const POSITIVE: [u8; 3] = [0, 255, 0];
const NEGATIVE: [u8; 3] = [0, 0, 255];

/// Everything an agent is shown about one candidate besides the raw image.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateContext {
    pub overlay: ColorImage,
    pub summary: String,
    pub area_fraction: f64,
    /// Inclusive (row_min, col_min, row_max, col_max); `None` for an empty mask.
    pub bbox: Option<(usize, usize, usize, usize)>,
    /// Fraction of prompts agreeing with the mask (positives inside, negatives outside).
    pub prompt_coverage: Option<f64>,
}

/// Mask pixels with a 4-neighbour outside the mask or on the image border.
pub fn mask_boundary(mask: &Mask) -> Mask {
    let (h, w) = mask.dim();
    Mask::from_shape_fn((h, w), |(r, c)| {
        if !mask[[r, c]] {
            return false;
        }
        r == 0
            || c == 0
            || r + 1 == h
            || c + 1 == w
            || !mask[[r - 1, c]]
            || !mask[[r + 1, c]]
            || !mask[[r, c - 1]]
            || !mask[[r, c + 1]]
    })
}

pub fn render_debate_context(
    image: &ColorImage,
    mask: &Mask,
    prompts: Option<&PointPromptSet>,
) -> Result<DebateContext> {
    ensure_same_dim("mask", image.dim(), mask.dim())?;
    let (h, w) = image.dim();
    let boundary = mask_boundary(mask);

    let src = image.data();
    let mut data = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let px = if boundary[[r, c]] {
                BOUNDARY
            } else {
                [src[[r, c, 0]], src[[r, c, 1]], src[[r, c, 2]]]
            };
            for (k, v) in px.into_iter().enumerate() {
                data[[r, c, k]] = v;
            }
        }
    }
    if let Some(set) = prompts {
        for p in &set.points {
            if p.row < h && p.col < w {
                let colour = match p.polarity {
                    Polarity::Positive => POSITIVE,
                    Polarity::Negative => NEGATIVE,
                };
                for (k, v) in colour.into_iter().enumerate() {
                    data[[p.row, p.col, k]] = v;
                }
            }
        }
    }
    let overlay = ColorImage::new(data)?;

    let area = mask.iter().filter(|&&m| m).count();
    let area_fraction = area as f64 / (h * w) as f64;
    let bbox = mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .fold(None, |acc: Option<(usize, usize, usize, usize)>, ((r, c), _)| {
            Some(match acc {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            })
        });

    let mut summary = String::new();
    writeln!(summary, "mask area fraction: {area_fraction:.4}").unwrap();
    match bbox {
        Some((r0, c0, r1, c1)) => writeln!(
            summary,
            "bounding box: rows {r0}..={r1}, cols {c0}..={c1} (image {h}x{w})"
        )
        .unwrap(),
        None => writeln!(summary, "bounding box: none (empty mask, image {h}x{w})").unwrap(),
    }

    let mut prompt_coverage = None;
    if let Some(set) = prompts {
        let inside = |r: usize, c: usize| r < h && c < w && mask[[r, c]];
        let pos: Vec<_> = set.positives().collect();
        let neg: Vec<_> = set.negatives().collect();
        let pos_in = pos.iter().filter(|p| inside(p.row, p.col)).count();
        let neg_out = neg.iter().filter(|p| !inside(p.row, p.col)).count();
        writeln!(summary, "positive prompts inside mask: {pos_in}/{}", pos.len()).unwrap();
        writeln!(summary, "negative prompts outside mask: {neg_out}/{}", neg.len()).unwrap();
        let total = pos.len() + neg.len();
        if total > 0 {
            prompt_coverage = Some((pos_in + neg_out) as f64 / total as f64);
        }
    }

    Ok(DebateContext {
        overlay,
        summary,
        area_fraction,
        bbox,
        prompt_coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{PromptPoint, SamplingParams};
    use ndarray::Array2;

    fn grey(h: usize, w: usize, v: u8) -> ColorImage {
        ColorImage::new(Array3::from_elem((h, w, 3), v)).unwrap()
    }

    #[test]
    fn empty_and_full_masks() {
        let img = grey(4, 4, 10);
        let empty = render_debate_context(&img, &Mask::from_elem((4, 4), false), None).unwrap();
        assert_eq!(empty.area_fraction, 0.0);
        assert!(empty.summary.contains("mask area fraction: 0.0000"));
        assert_eq!(empty.bbox, None);
        assert_eq!(empty.overlay, img);

        let full = render_debate_context(&img, &Mask::from_elem((4, 4), true), None).unwrap();
        assert_eq!(full.area_fraction, 1.0);
        assert_eq!(full.bbox, Some((0, 0, 3, 3)));
    }

    #[test]
    fn overlay_draws_exact_boundary() {
        // 3x3 square in a 5x5 image: the ring is boundary, the centre is not.
        let img = grey(5, 5, 10);
        let mask = Array2::from_shape_fn((5, 5), |(r, c)| (1..4).contains(&r) && (1..4).contains(&c));
        let ctx = render_debate_context(&img, &mask, None).unwrap();
        let red: Vec<(usize, usize)> = (0..5)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| ctx.overlay.data()[[r, c, 0]] == 255)
            .collect();
        let expected = vec![(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2), (3, 3)];
        assert_eq!(red, expected);
        assert_eq!(ctx.overlay.data()[[2, 2, 0]], 10);
        assert_eq!(
            ctx.summary,
            "mask area fraction: 0.3600\nbounding box: rows 1..=3, cols 1..=3 (image 5x5)\n"
        );
    }

    #[test]
    fn overlay_is_reproducible_and_reports_prompts() {
        let img = ColorImage::new(Array3::from_shape_fn((6, 6, 3), |(r, c, k)| (r * 31 + c * 7 + k) as u8)).unwrap();
        let mask = Array2::from_shape_fn((6, 6), |(r, c)| r >= 2 && c >= 2);
        let set = PointPromptSet {
            image_id: "x".into(),
            points: vec![
                PromptPoint { row: 3, col: 3, polarity: Polarity::Positive, entropy: 1.0 },
                PromptPoint { row: 0, col: 0, polarity: Polarity::Negative, entropy: 1.0 },
                PromptPoint { row: 4, col: 4, polarity: Polarity::Negative, entropy: 1.0 },
            ],
            params: SamplingParams::default(),
            missing_background: false,
        };
        let a = render_debate_context(&img, &mask, Some(&set)).unwrap();
        let b = render_debate_context(&img, &mask, Some(&set)).unwrap();
        assert_eq!(a, b);
        assert!(a.summary.contains("positive prompts inside mask: 1/1"));
        assert!(a.summary.contains("negative prompts outside mask: 1/2"));
        assert_eq!(a.prompt_coverage, Some(2.0 / 3.0));
        assert_eq!(&a.overlay.data().as_slice().unwrap()[..3], &NEGATIVE);
    }
}
