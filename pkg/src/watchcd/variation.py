"""Cross-site feature variability per month."""

from __future__ import annotations

import warnings

import numpy as np

from .datamodel import Dataset


def forward_fill(values: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Carry the last available row forward; leading gaps take the first available row."""
    out = np.array(values, dtype=np.float64)
    idx = np.where(available, np.arange(len(available)), -1)
    idx = np.maximum.accumulate(idx)
    if (idx < 0).all():
        raise ValueError("series has no available month")
    first = int(np.argmax(available))
    idx[idx < 0] = first
    return out[idx]


def feature_variation(dataset: Dataset, per_month_scaling: bool = False) -> np.ndarray:
    """Per month, the mean over dimensions of the cross-site std of min-max scaled features.

    Scaling is computed once over all sites and months per dimension, or per
    month when ``per_month_scaling`` is set. Missing months are forward-filled.
    """
    values, avail = dataset.stack()
    X = np.stack([forward_fill(v, a) for v, a in zip(values, avail)])  # (N, T, d)
    if X.shape[0] < 2:
        warnings.warn("feature variation needs at least two sites; returning zeros", stacklevel=2)
        return np.zeros(X.shape[1])
    axes = (0,) if per_month_scaling else (0, 1)
    lo = X.min(axis=axes, keepdims=True)
    span = X.max(axis=axes, keepdims=True) - lo
    scaled = np.where(span > 0, (X - lo) / np.where(span > 0, span, 1.0), 0.0)
    centered = scaled - scaled.mean(axis=0)
    # identical sites give exactly zero spread, not the rounding residue of the mean
    centered[:, np.ptp(scaled, axis=0) == 0] = 0.0
    return np.sqrt((centered**2).mean(axis=0)).mean(axis=1)
