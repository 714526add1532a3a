use ndarray::{s, ArrayView2};

use super::{EvalPair, EPS};

const OBJECT_BALANCE: f64 = 0.5;

/// Structure measure: a balance of object-aware and region-aware similarity.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let pred = pair.prediction().view();
    let gt = pair.ground_truth().view();
    let fg_ratio = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    if fg_ratio == 0.0 {
        1.0 - mean(pred.iter().copied())
    } else if fg_ratio == 1.0 {
        mean(pred.iter().copied())
    } else {
        let object = object_score(pred, gt, fg_ratio) * OBJECT_BALANCE;
        let region = region_score(pred, gt) * (1.0 - OBJECT_BALANCE);
        (object + region).max(0.0)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn object_similarity(values: &[f64]) -> f64 {
    let n = values.len();
    let m = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + std + EPS)
}

fn object_score(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, bool>, fg_ratio: f64) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt.iter()).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt.iter()).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    object_similarity(&fg) * fg_ratio + object_similarity(&bg) * (1.0 - fg_ratio)
}

fn region_score(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, bool>) -> f64 {
    let (h, w) = gt.dim();
    let area = (h * w) as f64;
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for ((r, c), _) in gt.indexed_iter().filter(|(_, &g)| g) {
        sr += r as f64;
        sc += c as f64;
        n += 1;
    }
    // Split point is one past the rounded centroid, so the top/left parts include it.
    let cy = (sr / n as f64).round_ties_even() as usize + 1;
    let cx = (sc / n as f64).round_ties_even() as usize + 1;
    let w_lt = (cx * cy) as f64 / area;
    let w_rt = (cy * (w - cx)) as f64 / area;
    let w_lb = ((h - cy) * cx) as f64 / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;
    let quad = |rows: (usize, usize), cols: (usize, usize)| {
        ssim(
            pred.slice(s![rows.0..rows.1, cols.0..cols.1]),
            gt.slice(s![rows.0..rows.1, cols.0..cols.1]),
        )
    };
    quad((0, cy), (0, cx)) * w_lt
        + quad((0, cy), (cx, w)) * w_rt
        + quad((cy, h), (0, cx)) * w_lb
        + quad((cy, h), (cx, w)) * w_rb
}

/// Region similarity of one quadrant; an empty quadrant scores 0 (its
/// weight is 0 as well).
fn ssim(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, bool>) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.sum() / nf;
    let y = gt.iter().filter(|&&g| g).count() as f64 / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let dx = p - x;
        let dy = g as u8 as f64 - y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let denom = nf - 1.0 + EPS;
    let (sigma_x, sigma_y, sigma_xy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x + sigma_y);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use ndarray::Array2;

    #[test]
    fn inverse_prediction_scores_below_half() {
        let g = Mask::from_shape_fn((8, 8), |(r, c)| r >= 2 && c >= 3);
        let inv = EvalPair::from_masks(&g.mapv(|b| !b), &g).unwrap();
        assert!(s_measure(&inv) < 0.5);
    }

    #[test]
    fn degenerate_ground_truths() {
        let empty = Mask::from_elem((4, 4), false);
        let p = Array2::from_shape_fn((4, 4), |(r, _)| if r == 0 { 1.0 } else { 0.0 });
        let pair = EvalPair::new(p.view(), &empty).unwrap();
        assert!((s_measure(&pair) - 0.75).abs() < 1e-12);
        let full = Mask::from_elem((4, 4), true);
        assert!((s_measure(&EvalPair::new(p.view(), &full).unwrap()) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn object_in_last_column_does_not_produce_nan() {
        let g = Mask::from_shape_fn((5, 5), |(_, c)| c == 4);
        let p = Array2::from_shape_fn((5, 5), |(r, c)| ((r + c) % 3) as f64 / 2.0);
        let v = s_measure(&EvalPair::new(p.view(), &g).unwrap());
        assert!(v.is_finite());
    }
}
