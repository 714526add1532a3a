use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::nearest_foreground;
use crate::debate::mask_boundary;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dim, Mask};

/// Which kind of pixel a histogram row counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    Scribble,
    Mask,
    PredictedScribble,
}

impl DistanceSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Scribble => "scribble",
            Self::Mask => "mask",
            Self::PredictedScribble => "predicted_scribble",
        }
    }
}

/// Histogram of relative boundary distances over `[0, 1]`, one count row per
/// source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    edges: Vec<f64>,
    counts: BTreeMap<DistanceSource, Vec<u64>>,
    skipped: Vec<String>,
}

impl DistanceHistogram {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        Ok(Self {
            edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
            counts: BTreeMap::new(),
            skipped: Vec::new(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Per-bin counts for `source`; all zeros when nothing was recorded.
    pub fn counts(&self, source: DistanceSource) -> Vec<u64> {
        self.counts.get(&source).cloned().unwrap_or_else(|| vec![0; self.n_bins()])
    }

    pub fn sources(&self) -> impl Iterator<Item = DistanceSource> + '_ {
        self.counts.keys().copied()
    }

    /// Identifiers of samples skipped for having an empty ground truth.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn total(&self, source: DistanceSource) -> u64 {
        self.counts.get(&source).map_or(0, |c| c.iter().sum())
    }

    pub fn bin_of(&self, distance: f64) -> usize {
        ((distance.clamp(0.0, 1.0) * self.n_bins() as f64) as usize).min(self.n_bins() - 1)
    }

    pub fn add_distances(&mut self, source: DistanceSource, distances: &[f64]) {
        let n = self.n_bins();
        let mut bins = vec![0usize; distances.len()];
        for (b, &d) in bins.iter_mut().zip(distances) {
            *b = self.bin_of(d);
        }
        let row = self.counts.entry(source).or_insert_with(|| vec![0; n]);
        for b in bins {
            row[b] += 1;
        }
    }

    /// Adds the relative distances of every `pixels` entry inside `gt`.
    /// Returns the number of pixels counted, or 0 when `gt` is empty and the
    /// sample was skipped.
    pub fn record(&mut self, sample_id: &str, source: DistanceSource, pixels: &Mask, gt: &Mask) -> Result<usize> {
        match relative_boundary_distances(pixels, gt)? {
            Some(d) => {
                self.add_distances(source, &d);
                Ok(d.len())
            }
            None => {
                tracing::warn!(sample_id, source = source.name(), "empty ground truth; sample skipped");
                self.skipped.push(sample_id.to_string());
                Ok(0)
            }
        }
    }

    /// Fraction of the `source` mass whose bins lie entirely at or above `lower`.
    pub fn fraction_at_least(&self, source: DistanceSource, lower: f64) -> f64 {
        let total = self.total(source);
        if total == 0 {
            return 0.0;
        }
        let counts = self.counts(source);
        let upper: u64 = counts
            .iter()
            .zip(self.edges.iter())
            .filter(|(_, &lo)| lo >= lower - 1e-12)
            .map(|(c, _)| c)
            .sum();
        upper as f64 / total as f64
    }

    /// `lower,upper,<source>...` rows for every bin.
    pub fn to_csv(&self) -> String {
        let sources: Vec<DistanceSource> = self.sources().collect();
        let mut out = String::from("lower,upper");
        for s in &sources {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for b in 0..self.n_bins() {
            out.push_str(&format!("{},{}", self.edges[b], self.edges[b + 1]));
            for s in &sources {
                out.push_str(&format!(",{}", self.counts[s][b]));
            }
            out.push('\n');
        }
        out
    }
}

/// 4-connected component labels of `mask` (0 is background, labels start at 1).
fn label_components(mask: &Mask) -> (Array2<usize>, usize) {
    let (h, w) = mask.dim();
    let mut labels = Array2::zeros((h, w));
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        let (r, c) = (start / w, start % w);
        if !mask[[r, c]] || labels[[r, c]] != 0 {
            continue;
        }
        next += 1;
        labels[[r, c]] = next;
        stack.push((r, c));
        while let Some((r, c)) = stack.pop() {
            let neighbours = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (nr, nc) in neighbours {
                if nr < h && nc < w && mask[[nr, nc]] && labels[[nr, nc]] == 0 {
                    labels[[nr, nc]] = next;
                    stack.push((nr, nc));
                }
            }
        }
    }
    (labels, next)
}

/// Relative distance of each `pixels` entry inside `gt` to the boundary of its
/// object: the Euclidean distance to the nearest boundary pixel of the same
/// 4-connected component, divided by the largest such distance within that
/// component. A component whose pixels all lie on its boundary yields 0.
/// Pixels outside `gt` are not counted. Returns `None` for an empty `gt`.
pub fn relative_boundary_distances(pixels: &Mask, gt: &Mask) -> Result<Option<Vec<f64>>> {
    ensure_same_dim("ground truth", pixels.dim(), gt.dim())?;
    let (labels, n) = label_components(gt);
    if n == 0 {
        return Ok(None);
    }
    let boundary = mask_boundary(gt);
    let mut out = Vec::new();
    for label in 1..=n {
        let component_boundary = Mask::from_shape_fn(gt.dim(), |ix| boundary[ix] && labels[ix] == label);
        let (dist, _) = nearest_foreground(&component_boundary)
            .ok_or_else(|| Error::Invariant("object component without boundary pixels".into()))?;
        let max = labels
            .indexed_iter()
            .filter(|(_, &l)| l == label)
            .map(|(ix, _)| dist[ix])
            .fold(0.0, f64::max);
        for (ix, _) in labels.indexed_iter().filter(|(ix, &l)| l == label && pixels[*ix]) {
            out.push(if max > 0.0 { dist[ix] / max } else { 0.0 });
        }
    }
    Ok(Some(out))
}

/// Pixels whose value exceeds the given per-image percentile of `probability`
/// (nearest-rank, `percentile` in `[0, 100)`).
pub fn high_response_mask(probability: ArrayView2<'_, f64>, percentile: f64) -> Result<Mask> {
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::InvalidParameter(format!("percentile {percentile} outside [0, 100)")));
    }
    if probability.is_empty() {
        return Err(Error::Data("empty probability map".into()));
    }
    let mut sorted: Vec<f64> = probability.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    let cutoff = sorted[rank.saturating_sub(1).min(sorted.len() - 1)];
    Ok(probability.mapv(|v| v > cutoff))
}

/// Builds one histogram from `(sample_id, pixels, gt)` triples of a single source.
pub fn boundary_distance_histogram<'a>(
    source: DistanceSource,
    samples: impl IntoIterator<Item = (&'a str, &'a Mask, &'a Mask)>,
    n_bins: usize,
) -> Result<DistanceHistogram> {
    let mut hist = DistanceHistogram::new(n_bins)?;
    for (id, pixels, gt) in samples {
        hist.record(id, source, pixels, gt)?;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, radius: f64) -> Mask {
        let c = (n as f64 - 1.0) / 2.0;
        Mask::from_shape_fn((n, n), |(r, col)| {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            (dy * dy + dx * dx).sqrt() <= radius
        })
    }

    #[test]
    fn boundary_scribble_lands_in_first_bin() {
        let gt = disk(21, 8.0);
        let on_boundary = mask_boundary(&gt);
        let h = boundary_distance_histogram(DistanceSource::Scribble, [("a", &on_boundary, &gt)], 10).unwrap();
        let counts = h.counts(DistanceSource::Scribble);
        assert_eq!(counts[0], h.total(DistanceSource::Scribble));
        assert!(counts[0] > 0);
    }

    #[test]
    fn single_pixel_object_has_zero_distance() {
        let mut gt = Mask::from_elem((5, 5), false);
        gt[[2, 2]] = true;
        assert_eq!(relative_boundary_distances(&gt, &gt).unwrap(), Some(vec![0.0]));
    }

    #[test]
    fn empty_ground_truth_is_skipped() {
        let gt = Mask::from_elem((4, 4), false);
        let s = Mask::from_elem((4, 4), true);
        let h = boundary_distance_histogram(DistanceSource::Mask, [("empty", &s, &gt)], 4).unwrap();
        assert_eq!(h.total(DistanceSource::Mask), 0);
        assert_eq!(h.skipped(), ["empty".to_string()]);
    }

    #[test]
    fn components_are_normalized_separately() {
        let gt = Mask::from_shape_fn((7, 16), |(r, c)| (1..6).contains(&r) && ((1..6).contains(&c) || (8..15).contains(&c)));
        let d = relative_boundary_distances(&gt, &gt).unwrap().unwrap();
        assert_eq!(d.len(), 25 + 35);
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), 1 + 3);
    }

    #[test]
    fn high_response_keeps_top_decile() {
        let p = Array2::from_shape_fn((10, 10), |(r, c)| (r * 10 + c) as f64 / 100.0);
        let m = high_response_mask(p.view(), 90.0).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 10);
    }
}
