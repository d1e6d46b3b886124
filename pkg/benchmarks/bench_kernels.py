"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; prints one row per kernel
with the best-of-N wall time of each backend and the speed-up. Outputs of the
two backends are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from watchcd import _pykernels

try:
    from watchcd import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng: np.random.Generator):
    T, d = 96, 64
    values = rng.normal(size=(T, d))
    avail = (rng.random(T) < 0.9).astype(np.uint8)
    img = rng.random((64, 64))
    mask = (rng.random((64, 64)) < 0.9).astype(np.uint8)
    levels = rng.integers(0, 16, size=(64, 64)).astype(np.int64)
    return {
        "ted_raw l2 (96x64, R=3)": lambda k: k.ted_raw(values, avail, 3, False),
        "ted_raw cosine (96x64, R=3)": lambda k: k.ted_raw(values, avail, 3, True),
        "glcm (64x64, 16 levels)": lambda k: k.glcm(levels, mask, 0, 1, 16),
        "lbp_riu2 (64x64)": lambda k: k.lbp_riu2(img, mask),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; nothing to compare")
        return 1
    print(f"{'kernel':32s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        np.testing.assert_allclose(np.asarray(fn(_ckernels)), np.asarray(fn(_pykernels)), rtol=1e-12, atol=1e-12)
        t = {}
        for label, mod in (("py", _pykernels), ("c", _ckernels)):
            best = min(timeit.repeat(lambda: fn(mod), repeat=args.repeat, number=args.number))
            t[label] = 1e3 * best / args.number
        print(f"{name:32s} {t['py']:11.3f} {t['c']:12.3f} {t['py'] / t['c']:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
