use ndarray::Array2;

use super::{EvalPair, EPS};
use crate::raster::Mask;

const KERNEL_RADIUS: usize = 3;
const KERNEL_SIGMA: f64 = 5.0;
const BETA_SQ: f64 = 1.0;

/// Exact Euclidean distance from every pixel to the nearest set pixel of
/// `mask`, and that pixel's coordinates. Among equidistant candidates the
/// smallest column wins, then the smallest row. Returns `None` when the mask
/// is empty.
#[allow(clippy::type_complexity)]
pub fn nearest_foreground(mask: &Mask) -> Option<(Array2<f64>, Array2<(usize, usize)>)> {
    let (h, w) = mask.dim();
    if !mask.iter().any(|&m| m) {
        return None;
    }
    // Nearest set row within each column; ties prefer the upper row.
    let mut col_nearest: Array2<Option<usize>> = Array2::from_elem((h, w), None);
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if mask[[r, c]] {
                last = Some(r);
            }
            col_nearest[[r, c]] = last;
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if mask[[r, c]] {
                next = Some(r);
            }
            let candidate = match (col_nearest[[r, c]], next) {
                (Some(up), Some(down)) => Some(if r - up <= down - r { up } else { down }),
                (up, down) => up.or(down),
            };
            col_nearest[[r, c]] = candidate;
        }
    }
    let mut dist = Array2::zeros((h, w));
    let mut idx = Array2::from_elem((h, w), (0, 0));
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(usize, (usize, usize))> = None;
            for cc in 0..w {
                if let Some(rr) = col_nearest[[r, cc]] {
                    let d2 = r.abs_diff(rr).pow(2) + c.abs_diff(cc).pow(2);
                    if best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, (rr, cc)));
                    }
                }
            }
            let (d2, at) = best.expect("mask is non-empty");
            dist[[r, c]] = (d2 as f64).sqrt();
            idx[[r, c]] = at;
        }
    }
    Some((dist, idx))
}

fn gaussian_kernel() -> Vec<f64> {
    let size = 2 * KERNEL_RADIUS + 1;
    let r = KERNEL_RADIUS as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
            (-(x * x + y * y) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA)).exp()
        })
        .collect();
    let max = k.iter().copied().fold(0.0, f64::max);
    for v in &mut k {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Zero-padded 2-D filtering with the symmetric Gaussian kernel.
fn smooth(e: &Array2<f64>) -> Array2<f64> {
    let (h, w) = e.dim();
    let k = gaussian_kernel();
    let size = 2 * KERNEL_RADIUS + 1;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for ky in 0..size {
            for kx in 0..size {
                let (rr, cc) = (r as isize + ky as isize - KERNEL_RADIUS as isize, c as isize + kx as isize - KERNEL_RADIUS as isize);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += k[ky * size + kx] * e[[rr as usize, cc as usize]];
                }
            }
        }
        acc
    })
}

/// Weighted F-measure with beta^2 = 1. An empty ground truth scores 0.
pub fn weighted_f_measure(pair: &EvalPair) -> f64 {
    let pred = pair.prediction();
    let gt = pair.ground_truth();
    let Some((dist, idx)) = nearest_foreground(gt) else {
        return 0.0;
    };
    let err = Array2::from_shape_fn(gt.dim(), |ix| (pred[ix] - gt[ix] as u8 as f64).abs());
    // Background pixels inherit the error of their nearest foreground pixel.
    let dependent = Array2::from_shape_fn(gt.dim(), |ix| if gt[ix] { err[ix] } else { err[idx[ix]] });
    let smoothed = smooth(&dependent);
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err, mut fg_count) = (0.0, 0.0, 0usize);
    for (ix, &g) in gt.indexed_iter() {
        if g {
            let e = if smoothed[ix] < err[ix] { smoothed[ix] } else { err[ix] };
            fg_err += e;
            fg_count += 1;
        } else {
            let importance = 2.0 - (decay * dist[ix]).exp();
            bg_err += err[ix] * importance;
        }
    }
    let tp = fg_count as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_count as f64;
    let precision = tp / (tp + bg_err + EPS);
    (1.0 + BETA_SQ) * recall * precision / (recall + BETA_SQ * precision + EPS)
}
