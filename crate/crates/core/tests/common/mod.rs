//! Shared fixtures and brute-force reference implementations for the
//! integration tests.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribcod::prompting::{Polarity, PromptPoint};
use scribcod::raster::{GrayImage, Mask, ScribbleAnnotation, ScribbleLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_gray(rng: &mut ChaCha8Rng, h: usize, w: usize, levels: u32) -> GrayImage {
    let step = (256 / levels.max(1)) as u8;
    GrayImage::from_fn(h, w, |_| rng.random_range(0..levels) as u8 * step).unwrap()
}

pub fn random_scribbles(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> ScribbleAnnotation {
    let mut s = ScribbleAnnotation::unlabeled(h, w);
    for r in 0..h {
        for c in 0..w {
            if rng.random_bool(density) {
                let label = if rng.random_bool(0.5) { ScribbleLabel::Foreground } else { ScribbleLabel::Background };
                s.set(r, c, label);
            }
        }
    }
    s
}

/// Distinct random points with entropies drawn from a small set so ties occur.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: usize) -> Vec<PromptPoint> {
    let mut out: Vec<PromptPoint> = Vec::with_capacity(n);
    while out.len() < n {
        let (row, col) = (rng.random_range(0..extent), rng.random_range(0..extent));
        if out.iter().any(|p| (p.row, p.col) == (row, col)) {
            continue;
        }
        out.push(PromptPoint {
            row,
            col,
            polarity: Polarity::Positive,
            entropy: rng.random_range(0..4) as f64 * 0.5,
        });
    }
    out
}

/// Entropy in bits of the clipped `(2r+1)^2` window around `(row, col)`,
/// computed from a sorted list of window values.
pub fn entropy_oracle(image: &GrayImage, row: usize, col: usize, r: usize) -> f64 {
    let px = image.pixels();
    let (h, w) = image.dim();
    let mut values = Vec::new();
    for rr in row.saturating_sub(r)..=(row + r).min(h - 1) {
        for cc in col.saturating_sub(r)..=(col + r).min(w - 1) {
            values.push(px[[rr, cc]]);
        }
    }
    values.sort_unstable();
    let n = values.len() as f64;
    let mut h_bits = 0.0;
    let mut i = 0;
    while i < values.len() {
        let j = values[i..].iter().take_while(|&&v| v == values[i]).count();
        let p = j as f64 / n;
        h_bits -= p * p.log2();
        i += j;
    }
    h_bits.max(0.0)
}

fn d2(a: &PromptPoint, b: &PromptPoint) -> f64 {
    let (dr, dc) = (a.row as f64 - b.row as f64, a.col as f64 - b.col as f64);
    dr * dr + dc * dc
}

fn informativeness_order(points: &[PromptPoint]) -> Vec<PromptPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.entropy.partial_cmp(&a.entropy).unwrap().then((a.row, a.col).cmp(&(b.row, b.col))));
    sorted
}

/// Greedy spacing filter over the informativeness order.
pub fn spatial_filter_oracle(points: &[PromptPoint], d_min: f64) -> Vec<PromptPoint> {
    let mut kept: Vec<PromptPoint> = Vec::new();
    for p in informativeness_order(points) {
        if kept.iter().all(|k| d2(k, &p).sqrt() > d_min) {
            kept.push(p);
        }
    }
    kept
}

/// Farthest point sampling recomputing every min-distance from scratch.
pub fn fps_oracle(points: &[PromptPoint], n: usize) -> Vec<PromptPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut chosen = vec![informativeness_order(points)[0]];
    while chosen.len() < n.min(points.len()) {
        let mut best: Option<(f64, PromptPoint)> = None;
        for p in points {
            if chosen.iter().any(|c| (c.row, c.col) == (p.row, p.col)) {
                continue;
            }
            let score = chosen.iter().map(|c| d2(c, p)).fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((s, b)) => score > s || (score == s && (p.row, p.col) < (b.row, b.col)),
            };
            if better {
                best = Some((score, *p));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

pub fn disk(n: usize, radius: f64) -> Mask {
    let c = (n as f64 - 1.0) / 2.0;
    Mask::from_shape_fn((n, n), |(r, col)| {
        let (dy, dx) = (r as f64 - c, col as f64 - c);
        (dy * dy + dx * dx).sqrt() <= radius
    })
}

/// Relative boundary distances of `pixels` inside a single-component `gt`,
/// by exhaustive search over its boundary pixels.
pub fn boundary_distance_oracle(pixels: &Mask, gt: &Mask) -> Vec<f64> {
    let (h, w) = gt.dim();
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && gt[[r as usize, c as usize]];
    let mut boundary = Vec::new();
    for ((r, c), &g) in gt.indexed_iter() {
        let (ri, ci) = (r as isize, c as isize);
        if g && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !inside(ri + dr, ci + dc)) {
            boundary.push((r as f64, c as f64));
        }
    }
    let nearest = |r: usize, c: usize| {
        boundary
            .iter()
            .map(|&(br, bc)| ((r as f64 - br).powi(2) + (c as f64 - bc).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let max = gt.indexed_iter().filter(|(_, &g)| g).map(|((r, c), _)| nearest(r, c)).fold(0.0, f64::max);
    gt.indexed_iter()
        .filter(|((r, c), &g)| g && pixels[[*r, *c]])
        .map(|((r, c), _)| if max > 0.0 { nearest(r, c) / max } else { 0.0 })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Compares backprop gradients of `loss` with central differences at up to
/// `per_var` entries of each variable. Returns the worst violation ratio
/// `|a - n| / (atol + rtol * |n|)`; values `<= 1` pass.
pub fn gradient_check(
    vars: &[&Var],
    loss: &dyn Fn() -> Tensor,
    per_var: usize,
    step: f64,
    rtol: f64,
    atol: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let grads = loss().backward().unwrap();
    let mut worst: f64 = 0.0;
    for var in vars {
        let analytic = flat(grads.get(var.as_tensor()).expect("variable takes part in the loss"));
        let original = flat(var.as_tensor());
        let shape = var.dims().to_vec();
        let n = original.len();
        let picks: Vec<usize> = if n <= per_var { (0..n).collect() } else { (0..per_var).map(|_| rng.random_range(0..n)).collect() };
        for i in picks {
            let eval = |delta: f64| {
                let mut v = original.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap().to_dtype(var.dtype()).unwrap()).unwrap();
                scalar(&loss())
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            var.set(&Tensor::from_vec(original.clone(), shape.as_slice(), &Device::Cpu).unwrap().to_dtype(var.dtype()).unwrap()).unwrap();
            worst = worst.max((analytic[i] - numeric).abs() / (atol + rtol * numeric.abs()));
        }
    }
    worst
}

/// Plain-loop 2x2 mean pooling of an `(H, W)` plane.
pub fn area_half(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(r, c)| {
        (x[[2 * r, 2 * c]] + x[[2 * r + 1, 2 * c]] + x[[2 * r, 2 * c + 1]] + x[[2 * r + 1, 2 * c + 1]]) / 4.0
    })
}

/// Plain-loop bilinear resize with half-pixel centres and edge clamping.
pub fn bilinear_up(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (ih, iw) = x.dim();
    let coord = |o: usize, out: usize, inn: usize| {
        let s = ((o as f64 + 0.5) * inn as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inn - 1);
        (i0, (i0 + 1).min(inn - 1), s - i0 as f64)
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (r0, r1, fr) = coord(r, h, ih);
        let (c0, c1, fc) = coord(c, w, iw);
        let top = x[[r0, c0]] * (1.0 - fc) + x[[r0, c1]] * fc;
        let bottom = x[[r1, c0]] * (1.0 - fc) + x[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}
