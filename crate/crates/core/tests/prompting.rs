mod common;

use common::*;
use rand::Rng;
use scribcod::prompting::{
    compute_local_entropy, farthest_point_sample, sample_prompts, select_candidates, spatial_filter, Polarity,
    SamplingParams,
};
use scribcod::raster::{GrayImage, ScribbleAnnotation, ScribbleLabel};

#[test]
fn ten_point_spatial_filter_matches_greedy_oracle() {
    let mut r = rng(21);
    for _ in 0..20 {
        let points = random_points(&mut r, 10, 10);
        assert_eq!(spatial_filter(&points, 3.0).unwrap(), spatial_filter_oracle(&points, 3.0));
    }
}

#[test]
fn twelve_point_fps_matches_exhaustive_oracle() {
    let mut r = rng(22);
    for _ in 0..20 {
        let points = random_points(&mut r, 12, 20);
        assert_eq!(farthest_point_sample(&points, 5).unwrap(), fps_oracle(&points, 5));
    }
}

#[test]
fn checkerboard_entropy_matches_histogram_oracle() {
    let image = GrayImage::from_fn(5, 5, |(r, c)| if (r + c) % 2 == 0 { 0 } else { 255 }).unwrap();
    let mut s = ScribbleAnnotation::unlabeled(5, 5);
    s.set(2, 2, ScribbleLabel::Foreground);
    let map = compute_local_entropy(&image, &s, 2).unwrap();
    let expected = entropy_oracle(&image, 2, 2, 2);
    let (a, b) = (13.0f64 / 25.0, 12.0f64 / 25.0);
    assert!((expected + a * a.log2() + b * b.log2()).abs() < 1e-12);
    assert!((map.get(2, 2) - expected).abs() < 1e-12);
}

#[test]
fn select_candidates_uses_the_threshold_inequality() {
    let image = GrayImage::from_fn(1, 9, |(_, c)| [0, 0, 0, 0, 255, 0, 255, 0, 128][c]).unwrap();
    let mut s = ScribbleAnnotation::unlabeled(1, 9);
    for c in 0..9 {
        s.set(0, c, ScribbleLabel::Foreground);
    }
    let map = compute_local_entropy(&image, &s, 1).unwrap();
    let h_max = map.values().iter().copied().fold(0.0, f64::max);
    for tau in [0.0, 0.3, 0.5, 0.9, 1.0] {
        let got: Vec<usize> = select_candidates(&map, &s, tau).unwrap().iter().map(|p| p.col).collect();
        let expected: Vec<usize> = (0..9).filter(|&c| map.get(0, c) >= tau * h_max).collect();
        assert_eq!(got, expected, "tau {tau}");
    }
}

/// Two straight strokes, one per polarity, on a random-texture image.
fn two_scribble_fixture(seed: u64) -> (GrayImage, ScribbleAnnotation) {
    let mut r = rng(seed);
    let image = random_gray(&mut r, 48, 48, 4);
    let mut s = ScribbleAnnotation::unlabeled(48, 48);
    for c in 5..40 {
        s.set(12, c, ScribbleLabel::Foreground);
        s.set(36, c, ScribbleLabel::Background);
    }
    (image, s)
}

#[test]
fn two_scribble_count_is_min_of_budget_and_survivors() {
    for (seed, n, d_min) in [(1, 3, 4.0), (2, 5, 10.0), (3, 20, 6.0), (4, 2, 0.0)] {
        let (image, s) = two_scribble_fixture(seed);
        let params = SamplingParams {
            n_fg: n,
            n_bg: n,
            d_min,
            window_radius: 2,
            ..SamplingParams::default()
        };
        let set = sample_prompts("fixture", &image, &s, &params).unwrap();
        let map = compute_local_entropy(&image, &s, 2).unwrap();
        let candidates = select_candidates(&map, &s, params.tau).unwrap();
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let own: Vec<_> = candidates.iter().copied().filter(|p| p.polarity == polarity).collect();
            let survivors = spatial_filter_oracle(&own, d_min).len();
            let got = set.points.iter().filter(|p| p.polarity == polarity).count();
            assert_eq!(got, n.min(survivors), "seed {seed} {polarity:?}");
        }
        for p in &set.points {
            assert_eq!(s.labels()[[p.row, p.col]], p.polarity.scribble_label());
        }
    }
}

#[test]
fn foreground_only_annotation_gives_positive_only_set() {
    let (image, mut s) = two_scribble_fixture(5);
    for c in 5..40 {
        s.set(36, c, ScribbleLabel::Unlabeled);
    }
    let set = sample_prompts("fg", &image, &s, &SamplingParams::default()).unwrap();
    assert!(set.missing_background);
    assert!(!set.points.is_empty());
    assert!(set.points.iter().all(|p| p.polarity == Polarity::Positive));
}

#[test]
fn fps_with_full_budget_is_a_permutation() {
    let mut r = rng(23);
    for _ in 0..20 {
        let n = r.random_range(1..=15);
        let points = random_points(&mut r, n, 16);
        let mut got = farthest_point_sample(&points, n).unwrap();
        let mut want = points.clone();
        let key = |p: &scribcod::prompting::PromptPoint| (p.row, p.col);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }
}
