"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from sotifreq import G, KMH
from sotifreq.kernels import backends


def _cases():
    rng = np.random.default_rng(0)
    a2 = rng.uniform(0, 500, (40, 2))
    b2 = np.hstack([a2, a2 + rng.uniform(20, 120, (40, 2))])
    c2 = b2 + rng.normal(0, 8, b2.shape)
    c2[:, 2:] = np.maximum(c2[:, 2:], c2[:, :2] + 1)
    b3 = np.hstack([rng.uniform(-10, 10, (40, 3)), rng.uniform(1, 4, (40, 3))])
    c3 = b3 + np.hstack([rng.normal(0, 0.3, (40, 3)), np.zeros((40, 3))])
    n = 1500
    s_f = 40.0 + 22.0 * np.arange(n) * 0.01
    v_f = np.full(n, 22.0)
    ious = rng.random((40, 40))
    return {
        "delta_v_sim": lambda k: k.delta_v_sim(130 * KMH, 80 * KMH, 60.0, 0.5, 0.2 * G, 0.4 * G, 0.8 * G, 0.01),
        "rss_follow_sim": lambda k: k.rss_follow_sim(s_f, v_f, 0.0, 30.0, 100, 0.01,
                                                     0.5, 0.2 * G, 0.4 * G, 0.8 * G, 12.65, 0.774 * G),
        "iou_matrix_2d": lambda k: k.iou_matrix_2d(b2, c2),
        "iou_matrix_3d": lambda k: k.iou_matrix_3d(b3, c3),
        "greedy_match": lambda k: k.greedy_match(ious, 0.5),
    }


def run(repeat: int = 5) -> dict:
    out = {}
    impls = backends()
    for name, fn in _cases().items():
        row = {}
        for bname, mod in impls.items():
            number = 20
            t = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number
            row[bname] = t
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        out[name] = row
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    a = ap.parse_args(argv)
    res = run(a.repeat)
    print(f"{'kernel':<16}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, row in res.items():
        cy = row.get("cython")
        print(f"{name:<16}{row['python'] * 1e6:>14.1f}"
              f"{(cy * 1e6 if cy else float('nan')):>14.1f}{row.get('speedup', float('nan')):>10.1f}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
