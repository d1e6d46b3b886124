"""Training-free temporal embedding distance scorer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .datamodel import ScoreSeries, SiteSeries
from .errors import ValidationError

DISTANCES = ("l2", "cosine")
FIRST_MONTH_POLICIES = ("zero", "copy_next")


@dataclass(frozen=True)
class TedConfig:
    window: int = 3
    distance: str = "l2"
    first_month_policy: str = "zero"

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        if self.distance not in DISTANCES:
            raise ValidationError(f"unknown distance {self.distance!r}")
        if self.first_month_policy not in FIRST_MONTH_POLICIES:
            raise ValidationError(f"unknown first-month policy {self.first_month_policy!r}")

    @property
    def tag(self) -> str:
        return f"ted-{self.distance}-r{self.window}"


def ted_reference(series: SiteSeries, t: int, cfg: TedConfig = TedConfig()) -> np.ndarray | None:
    """Coordinate-wise median of the available months among the ``window`` preceding ``t``.

    Returns None when no preceding month is available (always the case at t=0).
    """
    if not 0 <= t < series.T:
        raise ValidationError(f"month index {t} outside [0, {series.T})")
    lo = max(0, t - cfg.window)
    rows = series.values[lo:t][series.available[lo:t]]
    if rows.shape[0] == 0:
        return None
    return np.median(rows, axis=0)


def minmax_probability(raw: np.ndarray) -> np.ndarray:
    """Per-site min-max scaling to [0, 1]; a constant input maps to 0.5 everywhere."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full_like(raw, 0.5)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def ted_raw_scores(series: SiteSeries, cfg: TedConfig = TedConfig()) -> np.ndarray:
    raw, _ = kernels.ted_raw(series.values, series.available, cfg.window, cfg.distance == "cosine")
    raw = np.asarray(raw)
    # unimputed gaps carry NaN rows; they score as "no evidence"
    raw[~np.isfinite(raw)] = 0.0
    if cfg.first_month_policy == "copy_next" and raw.shape[0] > 1:
        raw[0] = raw[1]
    return raw


def ted_score(series: SiteSeries, cfg: TedConfig = TedConfig()) -> ScoreSeries:
    raw = ted_raw_scores(series, cfg)
    return ScoreSeries(series.site_id, raw, minmax_probability(raw), cfg.tag)
