"""Smoke test for the tsgraph_py extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import json
import math
import tempfile
from pathlib import Path

import numpy as np

import tsgraph_py


def naive_profile(x, m):
    n = len(x) - m + 1
    subs = np.array([x[i:i + m] for i in range(n)])
    z = (subs - subs.mean(axis=1, keepdims=True)) / subs.std(axis=1, keepdims=True)
    excl = math.ceil(m / 2)
    out = np.full(n, np.inf)
    for i in range(n):
        d = np.sqrt(((z - z[i]) ** 2).sum(axis=1))
        lo, hi = max(0, i - excl), min(n, i + excl + 1)
        d[lo:hi] = np.inf
        out[i] = d.min()
    return out


def naive_dtw(a, b):
    acc = np.full((len(a) + 1, len(b) + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            acc[i, j] = abs(a[i - 1] - b[j - 1]) + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[-1, -1]


def main():
    rng = np.random.default_rng(0)
    x = rng.normal(size=300)
    profile, _ = tsgraph_py.matrix_profile(x.tolist(), 20)
    assert np.allclose(profile, naive_profile(x, 20), atol=1e-6)

    a, b = rng.normal(size=30), rng.normal(size=24)
    assert tsgraph_py.dtw_distance(a.tolist(), b.tolist()) == naive_dtw(a, b)

    level = tsgraph_py.spot_threshold(rng.exponential(size=100_000).tolist(), 1e-3)
    assert abs(level - math.log(1000)) < 0.1 * math.log(1000)

    with tempfile.TemporaryDirectory() as tmp:
        cfg = tsgraph_py.make_synthetic(str(Path(tmp) / "data"))
        summary = json.loads(tsgraph_py.run_pipeline(cfg, str(Path(tmp) / "run")))
        f1 = summary["metrics"]["f1"]
        assert f1 >= 0.9, f1
        again = json.loads(tsgraph_py.run_pipeline(cfg, str(Path(tmp) / "run")))
        assert all(s["status"] == "cached" for s in again["stages"])

    try:
        tsgraph_py.dtw_distance([0.0] * 4, [0.0] * 9, band=1)
    except ValueError:
        pass
    else:
        raise AssertionError("infeasible band accepted")
    print(f"smoke test passed (synthetic f1 {f1:.4f})")


if __name__ == "__main__":
    main()
