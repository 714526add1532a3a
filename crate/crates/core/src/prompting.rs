//! Entropy-driven point prompts from scribble annotations.
//!
//! Each scribble polarity goes through the same chain: local histogram
//! entropy, a relative entropy threshold, a greedy minimum-spacing filter and
//! finally farthest point sampling.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dim, GrayImage, ScribbleAnnotation, ScribbleLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn scribble_label(self) -> ScribbleLabel {
        match self {
            Polarity::Positive => ScribbleLabel::Foreground,
            Polarity::Negative => ScribbleLabel::Background,
        }
    }

    fn of_label(label: ScribbleLabel) -> Option<Self> {
        match label {
            ScribbleLabel::Foreground => Some(Polarity::Positive),
            ScribbleLabel::Background => Some(Polarity::Negative),
            ScribbleLabel::Unlabeled => None,
        }
    }
}

/// A scribble pixel together with its local entropy score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
    pub entropy: f64,
}

impl PromptPoint {
    fn dist2(&self, other: &PromptPoint) -> u64 {
        let dr = self.row.abs_diff(other.row) as u64;
        let dc = self.col.abs_diff(other.col) as u64;
        dr * dr + dc * dc
    }

    fn coords(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

/// Local entropy (bits) on scribble pixels, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    values: Array2<f64>,
    window_radius: usize,
}

impl EntropyMap {
    pub fn new(values: Array2<f64>, window_radius: usize) -> Result<Self> {
        if window_radius == 0 {
            return Err(Error::InvalidParameter("window radius must be >= 1".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(
                "entropy values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            values,
            window_radius,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn window_radius(&self) -> usize {
        self.window_radius
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }
}

/// Shannon entropy in bits of a histogram; empty bins contribute nothing.
pub fn histogram_entropy(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = f64::from(c) / total;
            -p * p.log2()
        })
        .sum();
    // A single-bin histogram gives -1 * log2(1) = -0.0.
    h.max(0.0)
}

pub fn compute_local_entropy(
    image: &GrayImage,
    scribbles: &ScribbleAnnotation,
    window_radius: usize,
) -> Result<EntropyMap> {
    if window_radius == 0 {
        return Err(Error::InvalidParameter("window radius must be >= 1".into()));
    }
    ensure_same_dim("scribble annotation", image.dim(), scribbles.dim())?;
    let labels = scribbles.labels();
    if !labels.iter().any(|l| l.is_scribble()) {
        return Err(Error::EmptyAnnotation("foreground or background"));
    }

    let (h, w) = image.dim();
    let px = image.pixels();
    let mut values = Array2::zeros((h, w));
    let mut hist = [0u32; 256];
    for ((r, c), label) in labels.indexed_iter() {
        if !label.is_scribble() {
            continue;
        }
        hist.fill(0);
        let r0 = r.saturating_sub(window_radius);
        let r1 = (r + window_radius).min(h - 1);
        let c0 = c.saturating_sub(window_radius);
        let c1 = (c + window_radius).min(w - 1);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                hist[px[[rr, cc]] as usize] += 1;
            }
        }
        values[[r, c]] = histogram_entropy(&hist);
    }
    EntropyMap::new(values, window_radius)
}

/// Keeps scribble pixels whose entropy reaches `tau` times the maximum entropy
/// of their own polarity. Output is in raster order.
pub fn select_candidates(
    entropy: &EntropyMap,
    scribbles: &ScribbleAnnotation,
    tau: f64,
) -> Result<Vec<PromptPoint>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {tau}")));
    }
    ensure_same_dim("entropy map", scribbles.dim(), entropy.values.dim())?;

    let labels = scribbles.labels();
    let mut h_max = [0.0f64; 2];
    for ((r, c), &label) in labels.indexed_iter() {
        if let Some(p) = Polarity::of_label(label) {
            let slot = &mut h_max[p as usize];
            *slot = slot.max(entropy.get(r, c));
        }
    }

    Ok(labels
        .indexed_iter()
        .filter_map(|((r, c), &label)| {
            let polarity = Polarity::of_label(label)?;
            let value = entropy.get(r, c);
            (value >= tau * h_max[polarity as usize]).then_some(PromptPoint {
                row: r,
                col: c,
                polarity,
                entropy: value,
            })
        })
        .collect())
}

/// Descending entropy, then ascending (row, col).
fn by_informativeness(a: &PromptPoint, b: &PromptPoint) -> Ordering {
    b.entropy
        .total_cmp(&a.entropy)
        .then_with(|| a.coords().cmp(&b.coords()))
}

/// Greedy minimum-spacing filter: visits candidates from most to least
/// informative and keeps one only if it is farther than `d_min` from every
/// point kept so far.
pub fn spatial_filter(candidates: &[PromptPoint], d_min: f64) -> Result<Vec<PromptPoint>> {
    if !(d_min >= 0.0 && d_min.is_finite()) {
        return Err(Error::InvalidParameter(format!("d_min must be >= 0, got {d_min}")));
    }
    let mut order = candidates.to_vec();
    order.sort_by(by_informativeness);
    let limit = d_min * d_min;
    let mut kept: Vec<PromptPoint> = Vec::new();
    for p in order {
        if kept.iter().all(|k| k.dist2(&p) as f64 > limit) {
            kept.push(p);
        }
    }
    Ok(kept)
}

/// Farthest point sampling seeded at the most informative point.
///
/// Ties on the max-min distance go to the lexicographically smallest
/// (row, col). Asking for at least as many points as given returns them all,
/// in pick order.
pub fn farthest_point_sample(points: &[PromptPoint], n: usize) -> Result<Vec<PromptPoint>> {
    if n == 0 {
        return Err(Error::InvalidParameter("must sample at least one point".into()));
    }
    let Some(seed) = points.iter().min_by(|a, b| by_informativeness(a, b)) else {
        return Ok(Vec::new());
    };
    let target = n.min(points.len());
    let seed_idx = points
        .iter()
        .position(|p| std::ptr::eq(p, seed))
        .expect("seed comes from points");

    let mut picked = vec![false; points.len()];
    let mut min_d2 = vec![u64::MAX; points.len()];
    let mut out = Vec::with_capacity(target);
    let mut current = seed_idx;
    loop {
        picked[current] = true;
        out.push(points[current]);
        if out.len() == target {
            break;
        }
        for (i, p) in points.iter().enumerate() {
            if !picked[i] {
                min_d2[i] = min_d2[i].min(p.dist2(&points[current]));
            }
        }
        current = (0..points.len())
            .filter(|&i| !picked[i])
            .max_by(|&a, &b| {
                min_d2[a]
                    .cmp(&min_d2[b])
                    .then_with(|| points[b].coords().cmp(&points[a].coords()))
            })
            .expect("target < len leaves an unpicked point");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub tau: f64,
    pub d_min: f64,
    pub n_fg: usize,
    pub n_bg: usize,
    pub window_radius: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            d_min: 10.0,
            n_fg: 5,
            n_bg: 5,
            window_radius: 5,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_fg == 0 {
            return Err(Error::InvalidParameter(
                "at least one positive prompt is required (n_fg >= 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.d_min >= 0.0 && self.d_min.is_finite()) {
            return Err(Error::InvalidParameter(format!("d_min must be >= 0, got {}", self.d_min)));
        }
        if self.window_radius == 0 {
            return Err(Error::InvalidParameter("window radius must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPromptSet {
    pub image_id: String,
    pub points: Vec<PromptPoint>,
    pub params: SamplingParams,
    /// Set when the annotation had no background scribbles.
    pub missing_background: bool,
}

impl PointPromptSet {
    pub fn positives(&self) -> impl Iterator<Item = &PromptPoint> {
        self.points.iter().filter(|p| p.polarity == Polarity::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PromptPoint> {
        self.points.iter().filter(|p| p.polarity == Polarity::Negative)
    }

    pub fn records(&self) -> impl Iterator<Item = PromptRecord> + '_ {
        self.points.iter().map(|p| PromptRecord {
            image_id: self.image_id.clone(),
            row: p.row,
            col: p.col,
            polarity: p.polarity,
            entropy: p.entropy,
        })
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<prompt stream>", e))?;
        }
        Ok(())
    }
}

/// Serialized form of one prompt point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
    pub entropy: f64,
}

pub fn read_prompt_records(input: impl BufRead) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<prompt stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn sample_polarity(
    entropy: &EntropyMap,
    scribbles: &ScribbleAnnotation,
    polarity: Polarity,
    params: &SamplingParams,
    n: usize,
) -> Result<Vec<PromptPoint>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<PromptPoint> = select_candidates(entropy, scribbles, params.tau)?
        .into_iter()
        .filter(|p| p.polarity == polarity)
        .collect();
    let spaced = spatial_filter(&candidates, params.d_min)?;
    farthest_point_sample(&spaced, n)
}

pub fn sample_prompts(
    image_id: impl Into<String>,
    image: &GrayImage,
    scribbles: &ScribbleAnnotation,
    params: &SamplingParams,
) -> Result<PointPromptSet> {
    params.validate()?;
    ensure_same_dim("scribble annotation", image.dim(), scribbles.dim())?;
    if scribbles.count(ScribbleLabel::Foreground) == 0 {
        return Err(Error::EmptyAnnotation("foreground"));
    }
    let image_id = image_id.into();
    let missing_background = scribbles.count(ScribbleLabel::Background) == 0;
    if missing_background {
        tracing::warn!(image_id = %image_id, "no background scribbles; prompt set is positive-only");
    }

    let entropy = compute_local_entropy(image, scribbles, params.window_radius)?;
    let mut points = sample_polarity(&entropy, scribbles, Polarity::Positive, params, params.n_fg)?;
    if !missing_background {
        points.extend(sample_polarity(
            &entropy,
            scribbles,
            Polarity::Negative,
            params,
            params.n_bg,
        )?);
    }
    Ok(PointPromptSet {
        image_id,
        points,
        params: *params,
        missing_background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scribble_at(h: usize, w: usize, pts: &[(usize, usize, ScribbleLabel)]) -> ScribbleAnnotation {
        let mut s = ScribbleAnnotation::unlabeled(h, w);
        for &(r, c, l) in pts {
            s.set(r, c, l);
        }
        s
    }

    fn pt(row: usize, col: usize, entropy: f64) -> PromptPoint {
        PromptPoint {
            row,
            col,
            polarity: Polarity::Positive,
            entropy,
        }
    }

    #[test]
    fn constant_window_has_zero_entropy() {
        let img = GrayImage::from_fn(5, 5, |_| 77).unwrap();
        let s = scribble_at(5, 5, &[(2, 2, ScribbleLabel::Foreground)]);
        let e = compute_local_entropy(&img, &s, 2).unwrap();
        assert_eq!(e.get(2, 2), 0.0);
    }

    #[test]
    fn checkerboard_center_entropy() {
        // 13 zeros and 12 255s over the full 5x5 window.
        let img = GrayImage::from_fn(5, 5, |(r, c)| if (r + c) % 2 == 0 { 0 } else { 255 }).unwrap();
        let s = scribble_at(5, 5, &[(2, 2, ScribbleLabel::Foreground)]);
        let e = compute_local_entropy(&img, &s, 2).unwrap();
        assert!((e.get(2, 2) - 0.998_845_535_995_201_8).abs() < 1e-12);
    }

    #[test]
    fn two_bin_entropy_on_clipped_row() {
        let img = GrayImage::new(array![[0u8, 0, 255]]).unwrap();
        let s = scribble_at(1, 3, &[(0, 1, ScribbleLabel::Background)]);
        let e = compute_local_entropy(&img, &s, 1).unwrap();
        assert!((e.get(0, 1) - 0.918_295_834_054_489_6).abs() < 1e-12);
        assert_eq!(e.get(0, 0), 0.0);
    }

    #[test]
    fn entropy_errors() {
        let img = GrayImage::from_fn(4, 4, |_| 0).unwrap();
        let empty = ScribbleAnnotation::unlabeled(4, 4);
        assert!(matches!(
            compute_local_entropy(&img, &empty, 1),
            Err(Error::EmptyAnnotation(_))
        ));
        let wrong = ScribbleAnnotation::unlabeled(3, 4);
        assert!(matches!(
            compute_local_entropy(&img, &wrong, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn candidate_thresholds() {
        let s = scribble_at(
            1,
            3,
            &[
                (0, 0, ScribbleLabel::Foreground),
                (0, 1, ScribbleLabel::Foreground),
                (0, 2, ScribbleLabel::Foreground),
            ],
        );
        let e = EntropyMap::new(array![[0.2, 0.5, 1.0]], 1).unwrap();
        let cols = |tau| -> Vec<usize> {
            select_candidates(&e, &s, tau).unwrap().iter().map(|p| p.col).collect()
        };
        assert_eq!(cols(0.0), vec![0, 1, 2]);
        assert_eq!(cols(0.5), vec![1, 2]);
        assert_eq!(cols(1.0), vec![2]);
        assert!(select_candidates(&e, &s, 1.5).is_err());
    }

    #[test]
    fn candidate_threshold_is_per_polarity() {
        let s = scribble_at(
            1,
            4,
            &[
                (0, 0, ScribbleLabel::Foreground),
                (0, 1, ScribbleLabel::Foreground),
                (0, 2, ScribbleLabel::Background),
                (0, 3, ScribbleLabel::Background),
            ],
        );
        let e = EntropyMap::new(array![[2.0, 1.0, 0.4, 0.1]], 1).unwrap();
        let got: Vec<usize> = select_candidates(&e, &s, 1.0).unwrap().iter().map(|p| p.col).collect();
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn all_zero_entropy_keeps_everything() {
        let s = scribble_at(1, 2, &[(0, 0, ScribbleLabel::Foreground), (0, 1, ScribbleLabel::Foreground)]);
        let e = EntropyMap::new(array![[0.0, 0.0]], 1).unwrap();
        assert_eq!(select_candidates(&e, &s, 0.7).unwrap().len(), 2);
    }

    #[test]
    fn spatial_filter_examples() {
        let pts = [pt(0, 0, 1.0), pt(0, 1, 1.0), pt(5, 5, 0.5)];
        assert_eq!(spatial_filter(&pts, 0.0).unwrap().len(), 3);
        let kept = spatial_filter(&pts[..2], 1.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!((kept[0].row, kept[0].col), (0, 0));
        assert!(spatial_filter(&[], 3.0).unwrap().is_empty());
        assert!(spatial_filter(&pts, -1.0).is_err());
    }

    #[test]
    fn spatial_filter_prefers_high_entropy() {
        let pts = [pt(0, 0, 0.1), pt(0, 1, 0.9)];
        let kept = spatial_filter(&pts, 2.0).unwrap();
        assert_eq!(kept, vec![pt(0, 1, 0.9)]);
    }

    #[test]
    fn fps_examples() {
        let pts = [pt(0, 0, 1.0), pt(10, 0, 0.5), pt(5, 1, 0.5)];
        let one = farthest_point_sample(&pts, 1).unwrap();
        assert_eq!(one, vec![pt(0, 0, 1.0)]);
        let two = farthest_point_sample(&pts, 2).unwrap();
        assert_eq!((two[1].row, two[1].col), (10, 0));
        assert_eq!(farthest_point_sample(&pts, 10).unwrap().len(), 3);
        assert!(farthest_point_sample(&pts, 0).is_err());
    }

    #[test]
    fn fps_seed_tie_breaks_lexicographically() {
        let pts = [pt(3, 3, 1.0), pt(1, 7, 1.0), pt(1, 2, 1.0)];
        assert_eq!(farthest_point_sample(&pts, 1).unwrap()[0], pt(1, 2, 1.0));
    }

    #[test]
    fn prompts_route_polarity() {
        let img = GrayImage::from_fn(20, 20, |(r, c)| ((r * 13 + c * 7) % 256) as u8).unwrap();
        let mut s = ScribbleAnnotation::unlabeled(20, 20);
        for c in 2..18 {
            s.set(10, c, ScribbleLabel::Foreground);
        }
        let params = SamplingParams {
            d_min: 3.0,
            window_radius: 2,
            ..Default::default()
        };
        let set = sample_prompts("a", &img, &s, &params).unwrap();
        assert!(set.missing_background);
        assert!(!set.points.is_empty());
        assert!(set.points.iter().all(|p| p.polarity == Polarity::Positive && p.row == 10));

        let bad = SamplingParams { n_fg: 0, ..params };
        assert!(matches!(
            sample_prompts("a", &img, &s, &bad),
            Err(Error::InvalidParameter(_))
        ));

        let only_bg = scribble_at(20, 20, &[(0, 0, ScribbleLabel::Background)]);
        assert!(matches!(
            sample_prompts("a", &img, &only_bg, &params),
            Err(Error::EmptyAnnotation("foreground"))
        ));
    }

    #[test]
    fn prompt_records_round_trip() {
        let set = PointPromptSet {
            image_id: "img-1".into(),
            points: vec![
                pt(1, 2, 0.25),
                PromptPoint {
                    row: 3,
                    col: 4,
                    polarity: Polarity::Negative,
                    entropy: 1.5,
                },
            ],
            params: SamplingParams::default(),
            missing_background: false,
        };
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains(r#""polarity":"NEGATIVE""#));
        let back = read_prompt_records(buf.as_slice()).unwrap();
        assert_eq!(back, set.records().collect::<Vec<_>>());
    }
}
