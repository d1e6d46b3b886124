"""Pure numpy implementations of the hot kernels.

Reference and fallback for :mod:`watchcd._ckernels`; both must agree to
floating-point rounding.
"""

from __future__ import annotations

import numpy as np

# neighbours of a 3x3 LBP stencil, in circular order starting east
_LBP_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def ted_raw(values: np.ndarray, available: np.ndarray, window: int, cosine: bool):
    """Distance of every month to the coordinate-wise median of its trailing window.

    Returns ``(raw, has_ref)``; months whose window holds no available row get
    ``raw = 0`` and ``has_ref = 0``.
    """
    values = np.asarray(values, dtype=np.float64)
    available = np.asarray(available, dtype=bool)
    T = values.shape[0]
    raw = np.zeros(T)
    has_ref = np.zeros(T, dtype=np.uint8)
    for t in range(T):
        lo = max(0, t - window)
        rows = values[lo:t][available[lo:t]]
        if rows.shape[0] == 0:
            continue
        has_ref[t] = 1
        ref = np.median(rows, axis=0)
        x = values[t]
        if cosine:
            nx = np.sqrt(x @ x)
            nr = np.sqrt(ref @ ref)
            if nx > 0.0 and nr > 0.0:
                # half squared distance of the unit vectors equals 1 - cos
                du = x / nx - ref / nr
                raw[t] = 0.5 * (du @ du)
        else:
            diff = x - ref
            raw[t] = np.sqrt(diff @ diff)
    return raw, has_ref


def glcm(levels: np.ndarray, mask: np.ndarray, dy: int, dx: int, n_levels: int) -> np.ndarray:
    """Symmetric co-occurrence counts for pixel pairs at offset ``(dy, dx)``, both masked."""
    levels = np.asarray(levels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    H, W = levels.shape
    y0, y1 = max(0, -dy), min(H, H - dy)
    x0, x1 = max(0, -dx), min(W, W - dx)
    a = levels[y0:y1, x0:x1]
    b = levels[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    ok = mask[y0:y1, x0:x1] & mask[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    counts = np.zeros((n_levels, n_levels))
    np.add.at(counts, (a[ok], b[ok]), 1.0)
    return counts + counts.T


def lbp_riu2(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Rotation-invariant uniform LBP codes (0..9) with P=8, R=1.

    Pixels whose full 3x3 neighbourhood is not masked get code -1.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    H, W = image.shape
    codes = np.full((H, W), -1, dtype=np.int64)
    if H < 3 or W < 3:
        return codes
    center = image[1:-1, 1:-1]
    valid = mask[1:-1, 1:-1].copy()
    bits = []
    for oy, ox in _LBP_OFFSETS:
        nb = image[1 + oy:H - 1 + oy, 1 + ox:W - 1 + ox]
        valid &= mask[1 + oy:H - 1 + oy, 1 + ox:W - 1 + ox]
        bits.append((nb >= center).astype(np.int64))
    bits = np.stack(bits)
    ones = bits.sum(axis=0)
    transitions = np.abs(bits - np.roll(bits, -1, axis=0)).sum(axis=0)
    inner = np.where(transitions <= 2, ones, 9)
    codes[1:-1, 1:-1] = np.where(valid, inner, -1)
    return codes
