"""Regenerates crates/core/tests/fixtures/metric_oracle.json.

Predictions are stored as floats in [0, 1] and min-max normalized here
before scoring, as the Rust evaluator does.

MAE, S-measure and weighted F-measure come from PySODMetrics 1.6.2. The
E-measure is computed here with 256 thresholds at (k + 0.5) / 256, p >= t,
and a per-pixel mean over N.
"""

import json
import sys
from pathlib import Path

import numpy as np
import py_sod_metrics as sod

SIZE = 16
RANDOM_CASES = 20
EPS = np.spacing(1)


def e_measure(pred, gt):
    n = gt.size
    gt_fg = gt.sum()
    total = 0.0
    for k in range(256):
        fg = pred >= (k + 0.5) / 256
        if gt_fg == 0:
            s = (~fg).sum()
        elif gt_fg == n:
            s = fg.sum()
        else:
            a = fg.astype(float) - fg.mean()
            b = gt.astype(float) - gt.mean()
            align = 2 * a * b / (a * a + b * b + EPS)
            s = ((align + 1) ** 2 / 4).sum()
        total += s / n
    return total / 256


def score(pred, gt):
    if pred.max() > pred.min():
        pred = (pred - pred.min()) / (pred.max() - pred.min())
    mae, sm, wfm = sod.MAE(), sod.Smeasure(), sod.WeightedFmeasure()
    for m in (mae, sm, wfm):
        m.step(pred, gt, normalize=False)
    return {
        "mae": float(mae.get_results()["mae"]),
        "s_measure": float(sm.get_results()["sm"]),
        "e_measure": float(e_measure(pred, gt)),
        "weighted_f": float(wfm.get_results()["wfm"]),
    }


def blob(rng):
    # Union of random rectangles so the ground truth has structure.
    gt = np.zeros((SIZE, SIZE), bool)
    for _ in range(rng.integers(1, 4)):
        r0, c0 = rng.integers(0, SIZE - 2, 2)
        h, w = rng.integers(2, 9, 2)
        gt[r0 : r0 + h, c0 : c0 + w] = True
    return gt


def case(name, pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    return {
        "name": name,
        "prediction": pred.tolist(),
        "ground_truth": gt.astype(int).tolist(),
        "scores": score(pred, gt),
    }


def main(out):
    rng = np.random.default_rng(20240601)
    cases = []
    for i in range(RANDOM_CASES):
        gt = blob(rng)
        if i % 2 == 0:
            pred = rng.random((SIZE, SIZE)) < 0.5
            pred = np.where(rng.random((SIZE, SIZE)) < 0.7, gt, pred).astype(float)
        else:
            noise = rng.integers(0, 256, (SIZE, SIZE))
            pred = np.clip(np.where(gt, 160, 60) + (noise - 128) // 2, 0, 255) / 255
        cases.append(case(f"random_{i:02d}", pred, gt))

    half = np.zeros((SIZE, SIZE), bool)
    half[:, : SIZE // 2] = True
    cases.append(case("uniform_half_on_half_foreground", np.full((SIZE, SIZE), 0.5), half))
    cases.append(case("all_zero_prediction", np.zeros((SIZE, SIZE)), blob(rng)))
    yy, xx = np.mgrid[:SIZE, :SIZE]
    disk = (yy - 7.5) ** 2 + (xx - 7.5) ** 2 <= 30
    shifted = (yy - 7.5) ** 2 + (xx - 10.5) ** 2 <= 30
    cases.append(case("half_overlap_disk", shifted, disk))

    Path(out).write_text(json.dumps({"size": SIZE, "cases": cases}, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/metric_oracle.json")
