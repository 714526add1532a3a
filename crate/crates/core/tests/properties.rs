mod common;

use candle_core::{Device, Tensor};
use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use scribcod::losses::{build_mixed_target, cod_loss, debias_loss, scribble_loss, DebiasForm};
use scribcod::metrics::{
    boundary_distance_histogram, e_measure, mae, s_measure, weighted_f_measure, DistanceSource, EvalPair,
};
use scribcod::prompting::{
    compute_local_entropy, farthest_point_sample, histogram_entropy, sample_prompts, spatial_filter, Polarity,
    PromptPoint, SamplingParams,
};
use scribcod::raster::{GrayImage, Mask, ScribbleAnnotation, ScribbleLabel};

fn gray(h: usize, w: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0u8..4, h * w).prop_map(move |v| GrayImage::new(Array2::from_shape_vec((h, w), v.iter().map(|x| x * 60).collect()).unwrap()).unwrap())
}

fn labels(h: usize, w: usize) -> impl Strategy<Value = ScribbleAnnotation> {
    prop::collection::vec(0u8..6, h * w).prop_map(move |v| {
        let mut s = ScribbleAnnotation::unlabeled(h, w);
        for (i, code) in v.into_iter().enumerate() {
            match code {
                0 => s.set(i / w, i % w, ScribbleLabel::Foreground),
                1 => s.set(i / w, i % w, ScribbleLabel::Background),
                _ => {}
            }
        }
        s
    })
}

fn points(max: usize) -> impl Strategy<Value = Vec<PromptPoint>> {
    prop::collection::btree_map((0usize..12, 0usize..12), 0u8..4, 1..=max).prop_map(|m| {
        m.into_iter()
            .map(|((row, col), e)| PromptPoint {
                row,
                col,
                polarity: Polarity::Positive,
                entropy: e as f64 * 0.5,
            })
            .collect()
    })
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

fn unit_map(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

fn t(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), (1, 1, 1, v.len()), &Device::Cpu).unwrap()
}

fn value(t: scribcod::Result<Tensor>) -> f64 {
    scalar(&t.unwrap())
}

fn dist2(a: &PromptPoint, b: &PromptPoint) -> f64 {
    (a.row as f64 - b.row as f64).powi(2) + (a.col as f64 - b.col as f64).powi(2)
}

/// The structure measure splits at the rounded centroid with the centroid
/// column on the left, so mirroring can move pixels between regions.
#[test]
fn structure_measure_split_is_not_mirror_symmetric() {
    let mut p = Array2::<f64>::zeros((12, 12));
    p[[11, 11]] = 0.38;
    let mut g = Mask::from_elem((12, 12), false);
    g[[11, 8]] = true;
    let pair = EvalPair::new(p.view(), &g).unwrap();
    let (a, b) = (s_measure(&pair), s_measure(&pair.flipped_horizontally()));
    assert!((a - 0.4764542023164566).abs() < 1e-12, "{a}");
    assert!((b - 0.8062414363590316).abs() < 1e-12, "{b}");
}

#[test]
fn structure_measure_is_flip_invariant_for_uniform_truths() {
    let mut r = rng(77);
    for _ in 0..20 {
        let p = Array2::from_shape_fn((10, 10), |_| rand::Rng::random_range(&mut r, 0.0..1.0));
        for g in [Mask::from_elem((10, 10), false), Mask::from_elem((10, 10), true)] {
            let pair = EvalPair::new(p.view(), &g).unwrap();
            assert!((s_measure(&pair) - s_measure(&pair.flipped_horizontally())).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entropy_is_bounded_by_window_size(image in gray(10, 10), s in labels(10, 10), r in 1usize..4) {
        prop_assume!(s.count(ScribbleLabel::Unlabeled) < 100);
        let map = compute_local_entropy(&image, &s, r).unwrap();
        let bound = (((2 * r + 1) * (2 * r + 1)) as f64).log2();
        for (ix, &v) in map.values().indexed_iter() {
            prop_assert!(v >= 0.0 && v <= bound + 1e-12);
            if !s.labels()[ix].is_scribble() {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn entropy_ignores_bin_order(mut counts in prop::collection::vec(0u32..20, 1..10), seed in any::<u64>()) {
        let before = histogram_entropy(&counts);
        use rand::seq::SliceRandom;
        counts.shuffle(&mut rng(seed));
        prop_assert!((histogram_entropy(&counts) - before).abs() < 1e-12);
    }

    #[test]
    fn spatial_filter_is_idempotent_and_spaced(p in points(15), d_min in 0.0f64..6.0) {
        let once = spatial_filter(&p, d_min).unwrap();
        prop_assert_eq!(&spatial_filter(&once, d_min).unwrap(), &once);
        for (i, a) in once.iter().enumerate() {
            for b in &once[i + 1..] {
                prop_assert!(dist2(a, b).sqrt() > d_min);
            }
        }
    }

    #[test]
    fn fps_picks_are_greedy(p in points(15), n in 1usize..16) {
        let picks = farthest_point_sample(&p, n).unwrap();
        prop_assert_eq!(picks.len(), n.min(p.len()));
        prop_assert_eq!(&picks, &fps_oracle(&p, n));
        for k in 1..picks.len() {
            let gap = |q: &PromptPoint| picks[..k].iter().map(|c| dist2(q, c)).fold(f64::INFINITY, f64::min);
            let chosen = gap(&picks[k]);
            for q in p.iter().filter(|q| !picks[..=k].contains(q)) {
                prop_assert!(chosen >= gap(q));
            }
        }
    }

    #[test]
    fn prompts_lie_on_matching_scribbles(image in gray(24, 24), s in labels(24, 24), d_min in 0.0f64..5.0) {
        prop_assume!(s.count(ScribbleLabel::Foreground) > 0);
        let params = SamplingParams { d_min, window_radius: 2, ..SamplingParams::default() };
        let set = sample_prompts("p", &image, &s, &params).unwrap();
        for p in &set.points {
            prop_assert_eq!(s.labels()[[p.row, p.col]], p.polarity.scribble_label());
        }
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let own: Vec<_> = set.points.iter().filter(|p| p.polarity == polarity).collect();
            for (i, a) in own.iter().enumerate() {
                for b in &own[i + 1..] {
                    prop_assert!(dist2(a, b).sqrt() > d_min);
                }
            }
        }
    }

    #[test]
    fn mixed_target_is_binary_and_tracks_scribbles(pseudo in mask(9, 9), s in labels(9, 9), radius in 0usize..3) {
        let target = build_mixed_target(&[pseudo], &s, radius).unwrap();
        prop_assert!(target.mixed.iter().all(|&v| v == 0.0 || v == 1.0));
        let scribbled = target.scribbled();
        for (ix, &l) in s.labels().indexed_iter() {
            prop_assert_eq!(scribbled[ix], l != ScribbleLabel::Unlabeled);
            if l == ScribbleLabel::Foreground {
                prop_assert_eq!(target.mixed[ix], 1.0);
            }
        }
    }

    #[test]
    fn losses_are_finite_and_non_negative(
        p in prop::collection::vec(0.0f64..=1.0, 8),
        q in prop::collection::vec(0.0f64..=1.0, 8),
        y in prop::collection::vec(0u8..3, 8),
    ) {
        let fg: Vec<f64> = y.iter().map(|&v| (v == 1) as u8 as f64).collect();
        let bg: Vec<f64> = y.iter().map(|&v| (v == 2) as u8 as f64).collect();
        let scribbled: Vec<f64> = y.iter().map(|&v| (v > 0) as u8 as f64).collect();
        let values = [
            value(scribble_loss(&t(&p), &t(&scribbled), 0.02)),
            value(cod_loss(&t(&p), &t(&fg))),
            value(debias_loss(&t(&p), &t(&q), &t(&fg), &t(&bg), 0.9, DebiasForm::ClassConditional)),
            value(debias_loss(&t(&p), &t(&q), &t(&fg), &t(&bg), 0.9, DebiasForm::Literal)),
        ];
        for v in values {
            prop_assert!(v.is_finite() && v >= -1e-12, "{v}");
        }
    }

    #[test]
    fn scribble_loss_decreases_in_p_on_scribbles(a in 0.01f64..0.98, step in 0.001f64..0.01, rest in 0.01f64..0.99) {
        let y = t(&[1.0, 0.0]);
        let lo = value(scribble_loss(&t(&[a, rest]), &y, 0.02));
        let hi = value(scribble_loss(&t(&[a + step, rest]), &y, 0.02));
        prop_assert!(hi < lo);
    }

    #[test]
    fn debias_decreases_in_confidence(p_scrib in 0.0f64..=1.0, q in 0.01f64..0.98, step in 0.001f64..0.01, fg in any::<bool>()) {
        let (f, b) = if fg { (t(&[1.0]), t(&[0.0])) } else { (t(&[0.0]), t(&[1.0])) };
        let seg = |q: f64| if fg { q } else { 1.0 - q };
        let lo = value(debias_loss(&t(&[p_scrib]), &t(&[seg(q + step)]), &f, &b, 0.9, DebiasForm::ClassConditional));
        let hi = value(debias_loss(&t(&[p_scrib]), &t(&[seg(q)]), &f, &b, 0.9, DebiasForm::ClassConditional));
        prop_assert!(lo < hi);
    }

    #[test]
    fn low_scribble_probability_gets_stronger_supervision(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, q in 0.01f64..0.99) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let one = |p: f64| value(debias_loss(&t(&[p]), &t(&[q]), &t(&[1.0]), &t(&[0.0]), 0.9, DebiasForm::ClassConditional));
        prop_assert!(one(lo) >= one(hi) - 1e-12);
    }

    #[test]
    fn mae_and_e_measure_are_flip_invariant(p in unit_map(12, 12), g in mask(12, 12)) {
        let pair = EvalPair::new(p.view(), &g).unwrap();
        let flipped = pair.flipped_horizontally();
        for metric in [mae, e_measure] {
            prop_assert!((metric(&pair) - metric(&flipped)).abs() < 1e-9);
        }
    }

    /// Equidistant foreground pixels then share one error, so the nearest-pixel
    /// tie rule cannot change the score.
    #[test]
    fn weighted_f_is_flip_invariant_without_error_ties(p in unit_map(12, 12), g in mask(12, 12), inside in 0.0f64..=1.0) {
        let p = ndarray::Zip::from(&p).and(&g).map_collect(|&v, &fg| if fg { inside } else { v });
        let pair = EvalPair::new(p.view(), &g).unwrap();
        let flipped = pair.flipped_horizontally();
        for metric in [weighted_f_measure] {
            prop_assert!((metric(&pair) - metric(&flipped)).abs() < 1e-9);
        }
    }

    #[test]
    fn mae_is_complement_symmetric(p in unit_map(8, 8), g in mask(8, 8)) {
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi > lo);
        let a = EvalPair::new(p.view(), &g).unwrap();
        let b = EvalPair::new(p.mapv(|v| 1.0 - v).view(), &g.mapv(|v| !v)).unwrap();
        prop_assert!((mae(&a) - mae(&b)).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_equals_counted_pixels(pixels in mask(12, 12), gt in mask(12, 12), bins in 1usize..20) {
        let hist = boundary_distance_histogram(DistanceSource::Mask, [("x", &pixels, &gt)], bins).unwrap();
        let inside = pixels.iter().zip(gt.iter()).filter(|(&p, &g)| p && g).count() as u64;
        prop_assert_eq!(hist.total(DistanceSource::Mask), inside);
        prop_assert!(hist.edges().windows(2).all(|e| e[0] < e[1]));
    }
}
