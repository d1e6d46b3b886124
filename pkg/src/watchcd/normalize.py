"""Calendar-aware standardization, gap imputation and cross-grid scaling."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import Dataset
from .errors import DimensionMismatch, FormatError, ValidationError

DEFAULT_EPS = 1e-6

STATS_MAGIC = b"WTCS"
STATS_VERSION = 1
_STATS_HEADER = struct.Struct("<4sHIdH")


def impute_missing(dataset: Dataset) -> Dataset:
    """Fill unavailable months with the cross-site, cross-year mean of their calendar month.

    Availability flags are kept as-is so the filled cells stay auditable.
    """
    values, avail = dataset.stack()
    if avail.all():
        return dataset
    months = dataset.axis.calendar_months()
    filled = values.copy()
    for m in range(12):
        cols = months == m
        if not cols.any():
            continue
        block = values[:, cols]
        ok = avail[:, cols]
        if not ok.any():
            raise ValidationError(f"calendar month {m + 1} has no observation in the whole dataset")
        mean = block[ok].mean(axis=0)
        patch = np.where(ok[..., None], block, mean)
        filled[:, cols] = patch
    return dataset.with_values(filled, imputed_cells=int((~avail).sum()))


def imputed_fraction(dataset: Dataset) -> float:
    """Fraction of site-month cells that imputation fills."""
    return dataset.missing_fraction()


@dataclass(frozen=True, eq=False)
class CalendarStats:
    per_month_mean: np.ndarray  # (12, d)
    per_month_std: np.ndarray  # (12, d)
    global_mean: np.ndarray  # (d,)
    global_std: np.ndarray  # (d,)
    epsilon: float = DEFAULT_EPS
    population: str = "all"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        for name in ("per_month_mean", "per_month_std", "global_mean", "global_std"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if (self.per_month_std < 0).any() or (self.global_std < 0).any():
            raise ValidationError("standard deviations must be non-negative")

    @property
    def d(self) -> int:
        return self.global_mean.shape[0]

    def to_bytes(self) -> bytes:
        pop = self.population.encode("utf-8")
        head = _STATS_HEADER.pack(STATS_MAGIC, STATS_VERSION, self.d, self.epsilon, len(pop))
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.per_month_mean, self.per_month_std, self.global_mean, self.global_std)
        )
        return head + pop + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CalendarStats":
        if len(raw) < _STATS_HEADER.size:
            raise FormatError("truncated stats file")
        magic, version, d, eps, npop = _STATS_HEADER.unpack_from(raw)
        if magic != STATS_MAGIC:
            raise FormatError(f"bad stats magic {magic!r}")
        if version != STATS_VERSION:
            raise FormatError(f"unsupported stats version {version}")
        off = _STATS_HEADER.size
        pop = raw[off:off + npop].decode("utf-8")
        off += npop
        if len(raw) != off + 8 * (26 * d):
            raise FormatError("stats file size does not match its header")
        arrs = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
        pm = arrs[: 12 * d].reshape(12, d)
        ps = arrs[12 * d: 24 * d].reshape(12, d)
        return cls(pm, ps, arrs[24 * d: 25 * d], arrs[25 * d:], eps, pop)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CalendarStats":
        path = Path(path)
        if not path.exists():
            raise FormatError(f"stats file not found: {path}")
        return cls.from_bytes(path.read_bytes())


def _stage_one(values: np.ndarray, months: np.ndarray, mean: np.ndarray, std: np.ndarray, eps: float):
    return (values - mean[months]) / (std[months] + eps)


def fit_calendar_stats(dataset: Dataset, epsilon: float = DEFAULT_EPS, population: str = "all") -> CalendarStats:
    """Fit per-calendar-month and global statistics (population std in both stages).

    The dataset must be fully filled; run :func:`impute_missing` first.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    values, _ = dataset.stack()
    if not np.isfinite(values).all():
        raise ValidationError("dataset has unfilled months; impute before fitting")
    d = values.shape[2]
    months = dataset.axis.calendar_months()
    pm = np.zeros((12, d))
    ps = np.zeros((12, d))
    for m in range(12):
        block = values[:, months == m].reshape(-1, d)
        if block.shape[0]:
            pm[m] = block.mean(axis=0)
            ps[m] = block.std(axis=0)
    tilde = _stage_one(values, months, pm, ps, epsilon).reshape(-1, d)
    return CalendarStats(pm, ps, tilde.mean(axis=0), tilde.std(axis=0), epsilon, population)


def apply_two_stage(dataset: Dataset, stats: CalendarStats) -> Dataset:
    """Apply frozen calendar then global standardization to every site."""
    if dataset.d != stats.d:
        raise DimensionMismatch(f"dataset has d={dataset.d}, stats were fitted with d={stats.d}")
    values, _ = dataset.stack()
    months = dataset.axis.calendar_months()
    eps = stats.epsilon
    tilde = _stage_one(values, months, stats.per_month_mean, stats.per_month_std, eps)
    out = (tilde - stats.global_mean) / (stats.global_std + eps)
    return dataset.with_values(out, stats_fingerprint=stats.fingerprint())


def normalize_dataset(dataset: Dataset, stats: CalendarStats | None = None, population: str = "all",
                      epsilon: float = DEFAULT_EPS) -> tuple[Dataset, CalendarStats]:
    """Impute, fit (unless ``stats`` is given) and apply.

    ``population="train"`` fits on the train split only.
    """
    filled = impute_missing(dataset)
    if stats is None:
        fit_on = filled
        if population == "train":
            ids = filled.split("train")
            if not ids:
                raise ValidationError("population 'train' requested but no site is in the train split")
            fit_on = filled.subset(ids)
        elif population != "all":
            raise ValidationError(f"unknown fitting population {population!r}")
        stats = fit_calendar_stats(fit_on, epsilon, population)
    return apply_two_stage(filled, stats), stats


def cross_grid_normalize(grid_scores: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Standardize each month across a site's grid cells; a single grid maps to zeros."""
    g = np.atleast_2d(np.asarray(grid_scores, dtype=np.float64))
    centered = g - g.mean(axis=0)
    # the mean of equal values can round away from them; force exact zeros
    centered[:, np.ptp(g, axis=0) == 0] = 0.0
    return centered / (np.sqrt((centered**2).mean(axis=0)) + eps)


def pool_site(grid_scores: np.ndarray, mode: str = "max") -> np.ndarray:
    g = np.atleast_2d(np.asarray(grid_scores, dtype=np.float64))
    if mode == "max":
        return g.max(axis=0)
    if mode == "mean":
        return g.mean(axis=0)
    raise ValidationError(f"unknown pooling mode {mode!r}")
