"""Smoke test for the scribcod_py extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
or
    maturin develop -m crates/py/Cargo.toml
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

import scribcod_py as sc


def disk(n, radius):
    yy, xx = np.mgrid[:n, :n]
    c = (n - 1) / 2
    return (yy - c) ** 2 + (xx - c) ** 2 <= radius**2


def main():
    gt = disk(32, 10)

    perfect = sc.evaluate_map(gt.astype(np.float64), gt)
    assert perfect["mae"] == 0.0, perfect
    assert abs(perfect["s_measure"] - 1.0) < 1e-9, perfect
    assert abs(perfect["e_measure"] - 1.0) < 1e-9, perfect
    assert abs(perfect["weighted_f"] - 1.0) < 1e-9, perfect

    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    scribbles = np.zeros((32, 32), dtype=np.uint8)
    scribbles[16, 10:22] = 1
    scribbles[2, :] = 2
    points = sc.sample_prompts(image, scribbles, d_min=2.0)
    positives = [p for p in points if p[2]]
    assert positives, points
    for row, col, positive, _ in points:
        assert scribbles[row, col] == (1 if positive else 2)

    d = sc.boundary_distances(gt, gt)
    assert d is not None and len(d) == gt.sum() and d.min() >= 0 and d.max() == 1.0
    assert sc.boundary_distances(gt, np.zeros_like(gt)) is None

    try:
        sc.evaluate_map(np.full((4, 4), 2.0), np.ones((4, 4), dtype=bool))
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range prediction accepted")

    assert "[network]" in sc.default_config(toy=True)

    checkpoint = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    if checkpoint is not None:
        net = sc.Network.load(str(checkpoint))
        prob = net.predict(image)
        assert prob.shape == (32, 32) and 0.0 <= prob.min() and prob.max() <= 1.0
    else:
        with tempfile.TemporaryDirectory() as tmp:
            try:
                sc.Network.load(str(Path(tmp) / "missing.safetensors"))
            except OSError:
                pass
            else:
                raise AssertionError("missing checkpoint loaded")

    print("scribcod_py smoke test passed")


if __name__ == "__main__":
    main()
