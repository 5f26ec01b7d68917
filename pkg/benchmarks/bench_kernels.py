"""Compare the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times each kernel on 224x224 inputs, full radiomic extraction and one Adam
step over a 26537x512 weight matrix, with each backend swapped in.
"""
import argparse
import json
import sys
import timeit
from contextlib import contextmanager

import numpy as np

from radiohybrid import _kernels_py, fusionnet, preprocess, radiomics
from radiohybrid.radiomics import LbpConfig, extract_radiomics, lbp_offsets

try:
    from radiohybrid import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


@contextmanager
def use_backend(mod):
    saved = [(m, m.kernels) for m in (preprocess, radiomics, fusionnet)]
    for m, _ in saved:
        m.kernels = mod
    try:
        yield
    finally:
        for m, k in saved:
            m.kernels = k


def cases(rng):
    img = rng.random((224, 224))
    h = w = 224
    yy, xx = np.meshgrid(np.arange(h) - 111.5, np.arange(w) - 111.5, indexing="ij")
    c, s = np.cos(0.3), np.sin(0.3)
    sy, sx = 111.5 + s * xx + c * yy, 111.5 + c * xx - s * yy
    dy, dx = lbp_offsets(LbpConfig())
    mag = rng.random((224, 224))
    lo = rng.integers(0, 9, (224, 224)).astype(np.int64)
    frac = rng.random((224, 224))
    n = 26537 * 512
    adam = [rng.normal(size=n) for _ in range(2)] + [np.zeros(n), np.zeros(n)]

    def adam_call(k):
        p, g, m, v = adam
        k.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 0.1, 0.001, 1e-8, 0.0)

    return {
        "bilinear_sample (rotate 224)": lambda k: k.bilinear_sample(img, sy, sx, True),
        "lbp_codes (8, R=1, 224)": lambda k: k.lbp_codes(img, dy, dx, 1),
        "hog_cell_histograms (224)": lambda k: k.hog_cell_histograms(mag, lo, frac, 8, 9),
        "adam_update (13.6M params)": adam_call,
        "extract_radiomics (224)": lambda k: extract_radiomics(img),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    results = {}
    print(f"{'kernel':<30s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        row = {}
        for label, mod in (("numpy", _kernels_py), ("cython", _kernels_c)):
            with use_backend(mod):
                fn(mod)  # warm-up
                best = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            row[label] = 1000.0 * best
        row["speedup"] = row["numpy"] / row["cython"]
        results[name] = row
        print(f"{name:<30s} {row['numpy']:10.2f} {row['cython']:10.2f} {row['speedup']:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
