use super::{EvalPair, EPS};

/// Number of binarization thresholds; threshold `k` is `(k + 0.5) / 256`.
pub const E_MEASURE_THRESHOLDS: usize = 256;

/// Mean enhanced-alignment measure over all thresholds.
///
/// Thresholds sit strictly inside `(0, 1)`, so a binary prediction is
/// binarized identically at every threshold.
pub fn e_measure(pair: &EvalPair) -> f64 {
    let pred = pair.prediction();
    let gt = pair.ground_truth();
    let n = pred.len();
    let gt_fg = gt.iter().filter(|&&g| g).count();
    // Pixels binned by the first threshold they fall below, split by GT label.
    let mut fg_hist = [0usize; E_MEASURE_THRESHOLDS + 1];
    let mut bg_hist = [0usize; E_MEASURE_THRESHOLDS + 1];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        // Number of thresholds t with p >= t.
        let passed = ((p * 256.0 + 0.5).floor() as usize).min(E_MEASURE_THRESHOLDS);
        if g {
            fg_hist[passed] += 1;
        } else {
            bg_hist[passed] += 1;
        }
    }
    let mut total = 0.0;
    // Counts of prediction-foreground pixels for threshold k: those with passed > k.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut scores = [0.0; E_MEASURE_THRESHOLDS];
    for k in (0..E_MEASURE_THRESHOLDS).rev() {
        tp += fg_hist[k + 1];
        fp += bg_hist[k + 1];
        scores[k] = score_at(tp, fp, gt_fg, n);
    }
    for s in scores {
        total += s;
    }
    total / E_MEASURE_THRESHOLDS as f64
}

fn score_at(tp: usize, fp: usize, gt_fg: usize, n: usize) -> f64 {
    let pred_fg = tp + fp;
    let pred_bg = n - pred_fg;
    let sum = if gt_fg == 0 {
        pred_bg as f64
    } else if gt_fg == n {
        pred_fg as f64
    } else {
        let fn_ = gt_fg - tp;
        let tn = pred_bg - fn_;
        let mean_pred = pred_fg as f64 / n as f64;
        let mean_gt = gt_fg as f64 / n as f64;
        let parts = [
            (tp, 1.0 - mean_pred, 1.0 - mean_gt),
            (fp, 1.0 - mean_pred, -mean_gt),
            (fn_, -mean_pred, 1.0 - mean_gt),
            (tn, -mean_pred, -mean_gt),
        ];
        parts
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0 * count as f64
            })
            .sum()
    };
    sum / n as f64
}
