"""Handcrafted 60-dimensional features from masked 4-band patches.

This is a self-contained layout in the usual families (band statistics,
spectral indices, co-occurrence texture, local binary patterns), not a copy
of any particular published feature list. Only masked pixels contribute.

Layout (index ranges are half-open):

====== =================================================================
0-24   per band (B, G, R, NIR): mean, std, min, max, median, IQR
24-32  NDVI then NDWI: mean, std, p10, p90
32-40  GLCM at offsets (0, 1) then (1, 0): contrast, homogeneity,
       energy, correlation
40-50  rotation-invariant uniform LBP histogram (P=8, R=1), 10 bins
50-56  band-pair Pearson correlations (BG, BR, BN, GR, GN, RN)
56-60  masked-area fraction, luminance entropy (bits),
       gradient-magnitude mean and std
====== =================================================================

Luminance is the mean of the B, G and R bands, quantized to 16 levels over
its masked range for the co-occurrence and entropy features.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionMismatch, FormatError, ValidationError

N_FEATURES = 60
GRAY_LEVELS = 16
GLCM_OFFSETS = ((0, 1), (1, 0))
MIN_MASK_PIXELS = 16

PATCH_MAGIC = b"WTCP"
PATCH_VERSION = 1
_PATCH_HEADER = struct.Struct("<4sHIIiH")

FEATURE_NAMES = (
    [f"{b}_{s}" for b in ("blue", "green", "red", "nir") for s in ("mean", "std", "min", "max", "median", "iqr")]
    + [f"{i}_{s}" for i in ("ndvi", "ndwi") for s in ("mean", "std", "p10", "p90")]
    + [f"glcm{dy}{dx}_{s}" for dy, dx in GLCM_OFFSETS for s in ("contrast", "homogeneity", "energy", "correlation")]
    + [f"lbp_{k}" for k in range(10)]
    + [f"corr_{a}{b}" for a, b in combinations("bgrn", 2)]
    + ["mask_fraction", "lum_entropy", "grad_mean", "grad_std"]
)


@dataclass(frozen=True, eq=False)
class Patch:
    bands: np.ndarray  # (4, H, W): B, G, R, NIR
    mask: np.ndarray  # (H, W) bool
    site_id: str = ""
    month: int = 0

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if bands.ndim != 3 or bands.shape[0] != 4:
            raise DimensionMismatch(f"expected 4 bands of shape (H, W), got {bands.shape}")
        if mask.shape != bands.shape[1:]:
            raise DimensionMismatch(f"mask shape {mask.shape} does not match bands {bands.shape[1:]}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "mask", mask)


def _ratio_index(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    den = a + b
    safe = np.where(den == 0, 1.0, den)
    return np.where(den == 0, 0.0, (a - b) / safe)


def quantize(lum: np.ndarray, mask: np.ndarray, levels: int = GRAY_LEVELS) -> np.ndarray:
    """Map luminance to 0..levels-1 over its masked range; a flat range maps to 0."""
    vals = lum[mask]
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        return np.zeros(lum.shape, dtype=np.int64)
    q = np.floor((lum - lo) / (hi - lo) * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def glcm_props(counts: np.ndarray) -> tuple[float, float, float, float]:
    """Contrast, homogeneity, energy and correlation of a co-occurrence count matrix."""
    total = counts.sum()
    if total == 0:
        return 0.0, 0.0, 0.0, 0.0
    p = counts / total
    i, j = np.indices(p.shape)
    contrast = float((p * (i - j) ** 2).sum())
    homogeneity = float((p / (1.0 + (i - j) ** 2)).sum())
    energy = float(np.sqrt((p**2).sum()))
    mu_i, mu_j = (p * i).sum(), (p * j).sum()
    sd_i = np.sqrt((p * (i - mu_i) ** 2).sum())
    sd_j = np.sqrt((p * (j - mu_j) ** 2).sum())
    if sd_i < 1e-15 or sd_j < 1e-15:
        corr = 1.0  # constant image: perfectly predictable pairs
    else:
        corr = float((p * (i - mu_i) * (j - mu_j)).sum() / (sd_i * sd_j))
    return contrast, homogeneity, energy, corr


def _std(v: np.ndarray) -> float:
    # the mean of equal values can round away from them; a flat input has std exactly 0
    return float(v.std()) if v.size and np.ptp(v) > 0 else 0.0


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


def _gradient_magnitude(lum: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # central differences, only where all four neighbours are masked
    H, W = lum.shape
    if H < 3 or W < 3:
        return np.zeros(0)
    gx = 0.5 * (lum[1:-1, 2:] - lum[1:-1, :-2])
    gy = 0.5 * (lum[2:, 1:-1] - lum[:-2, 1:-1])
    ok = mask[1:-1, 1:-1] & mask[1:-1, 2:] & mask[1:-1, :-2] & mask[2:, 1:-1] & mask[:-2, 1:-1]
    return np.sqrt(gx**2 + gy**2)[ok]


def extract_handcrafted(patch: Patch) -> np.ndarray:
    """The 60-dimensional feature vector of one patch (layout in the module docstring)."""
    mask = patch.mask
    if mask.sum() < MIN_MASK_PIXELS:
        raise ValidationError(f"mask has {int(mask.sum())} pixels; at least {MIN_MASK_PIXELS} are required")
    if not np.isfinite(patch.bands[:, mask]).all():
        raise ValidationError("non-finite band values inside the mask")
    blue, green, red, nir = (patch.bands[k] for k in range(4))
    feats: list[float] = []
    px = patch.bands[:, mask]
    for v in px:
        q25, med, q75 = np.percentile(v, [25, 50, 75])
        feats += [v.mean(), _std(v), v.min(), v.max(), med, q75 - q25]
    for idx in (_ratio_index(nir, red)[mask], _ratio_index(green, nir)[mask]):
        p10, p90 = np.percentile(idx, [10, 90])
        feats += [idx.mean(), _std(idx), p10, p90]
    lum = (blue + green + red) / 3.0
    levels = quantize(lum, mask)
    for dy, dx in GLCM_OFFSETS:
        feats += glcm_props(kernels.glcm(levels, mask.astype(np.uint8), dy, dx, GRAY_LEVELS))
    codes = np.asarray(kernels.lbp_riu2(lum, mask.astype(np.uint8)))
    codes = codes[codes >= 0]
    hist = np.bincount(codes, minlength=10).astype(float)
    feats += (hist / hist.sum()).tolist() if hist.sum() else [0.0] * 10
    feats += [_corr(px[a], px[b]) for a, b in combinations(range(4), 2)]
    lev_hist = np.bincount(levels[mask], minlength=GRAY_LEVELS) / mask.sum()
    nz = lev_hist[lev_hist > 0]
    grad = _gradient_magnitude(lum, mask)
    feats += [
        mask.mean(),
        float(-(nz * np.log2(nz)).sum()) + 0.0,
        grad.mean() if grad.size else 0.0,
        _std(grad),
    ]
    out = np.asarray(feats, dtype=np.float64)
    assert out.shape == (N_FEATURES,)
    return out


# ---------------------------------------------------------------------------
# Patch files
# ---------------------------------------------------------------------------


def write_patch(path: str | os.PathLike, patch: Patch) -> None:
    sid = patch.site_id.encode("utf-8")
    H, W = patch.mask.shape
    with open(path, "wb") as fh:
        fh.write(_PATCH_HEADER.pack(PATCH_MAGIC, PATCH_VERSION, H, W, patch.month, len(sid)))
        fh.write(sid)
        fh.write(np.ascontiguousarray(patch.bands, dtype="<f4").tobytes())
        fh.write(patch.mask.astype(np.uint8).tobytes())


def read_patch(path: str | os.PathLike) -> Patch:
    raw = Path(path).read_bytes()
    if len(raw) < _PATCH_HEADER.size:
        raise FormatError(f"{path}: truncated patch header")
    magic, version, H, W, month, nsid = _PATCH_HEADER.unpack_from(raw)
    if magic != PATCH_MAGIC:
        raise FormatError(f"{path}: bad patch magic {magic!r}")
    if version != PATCH_VERSION:
        raise FormatError(f"{path}: unsupported patch version {version}")
    off = _PATCH_HEADER.size
    sid = raw[off:off + nsid].decode("utf-8")
    off += nsid
    if len(raw) != off + 16 * H * W + H * W:
        raise FormatError(f"{path}: size does not match header")
    bands = np.frombuffer(raw, dtype="<f4", count=4 * H * W, offset=off).reshape(4, H, W).astype(np.float64)
    mask = np.frombuffer(raw, dtype=np.uint8, count=H * W, offset=off + 16 * H * W).reshape(H, W).astype(bool)
    return Patch(bands, mask, sid, month)
