"""Core domain types, month indexing and on-disk formats.

Series live in memory as float64 with an explicit availability mask; rows of
unavailable months hold NaN until :func:`watchcd.normalize.impute_missing`
fills them. On disk each site is a little-endian ``WTCH`` binary file (float32
values) or, on ingest only, a CSV file. A JSON manifest ties sites, splits and
labels together.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionMismatch, FormatError, OutOfRange, ValidationError

SERIES_MAGIC = b"WTCH"
SERIES_VERSION = 1
_SERIES_HEADER = struct.Struct("<4sHII")

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TimeAxis:
    origin_year: int = 2017
    origin_month: int = 1
    length: int = 96

    def __post_init__(self):
        if self.length < 1:
            raise ValidationError(f"axis length must be >= 1, got {self.length}")
        if not 1 <= self.origin_month <= 12:
            raise ValidationError(f"origin_month must be in 1..12, got {self.origin_month}")

    def calendar_month(self, t: int) -> int:
        """Calendar month (1..12) of month index ``t``."""
        return (self.origin_month - 1 + t) % 12 + 1

    def year_of(self, t: int) -> int:
        return self.origin_year + (self.origin_month - 1 + t) // 12

    def month_index(self, year: int, month: int) -> int:
        return month_index(self, year, month)

    def calendar_months(self) -> np.ndarray:
        """Zero-based calendar month (0..11) for every index on the axis."""
        return (self.origin_month - 1 + np.arange(self.length)) % 12

    def to_dict(self) -> dict:
        return {"origin_year": self.origin_year, "origin_month": self.origin_month, "length": self.length}


def month_index(axis: TimeAxis, year: int, month: int) -> int:
    """Zero-based index of ``(year, month)`` on ``axis``.

    Raises :class:`OutOfRange` if the date falls outside ``[origin, origin + T)``.
    """
    if not 1 <= month <= 12:
        raise OutOfRange(f"month must be in 1..12, got {month}")
    t = (year - axis.origin_year) * 12 + (month - axis.origin_month)
    if not 0 <= t < axis.length:
        raise OutOfRange(f"{year}-{month:02d} is outside the {axis.length}-month axis")
    return t


@dataclass(frozen=True, eq=False)
class SiteSeries:
    site_id: str
    values: np.ndarray
    available: np.ndarray
    axis: TimeAxis

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        available = np.array(self.available, dtype=bool)
        if values.ndim != 2 or values.shape[0] != self.axis.length:
            raise DimensionMismatch(
                f"site {self.site_id!r}: values shape {values.shape} does not match T={self.axis.length}"
            )
        if available.shape != (self.axis.length,):
            raise DimensionMismatch(f"site {self.site_id!r}: availability mask has shape {available.shape}")
        if not np.isfinite(values[available]).all():
            raise ValidationError(f"site {self.site_id!r}: non-finite values in an available month")
        values.flags.writeable = False
        available.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "available", available)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> int:
        return self.axis.length

    def with_values(self, values: np.ndarray) -> "SiteSeries":
        return SiteSeries(self.site_id, values, self.available, self.axis)

    def truncated(self, length: int) -> "SiteSeries":
        """The first ``length`` months as a series on a shorter axis."""
        axis = TimeAxis(self.axis.origin_year, self.axis.origin_month, length)
        return SiteSeries(self.site_id, self.values[:length], self.available[:length], axis)


@dataclass(frozen=True)
class SiteLabel:
    site_id: str
    looted: bool
    event_month: int | None = None

    def __post_init__(self):
        if self.event_month is not None and not self.looted:
            raise ValidationError(f"site {self.site_id!r}: event month given for a preserved site")


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    site_id: str
    raw: np.ndarray
    probability: np.ndarray
    scorer_tag: str

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        prob = np.asarray(self.probability, dtype=np.float64)
        if raw.shape != prob.shape or raw.ndim != 1:
            raise DimensionMismatch("raw and probability must be equal-length vectors")
        if not np.isfinite(raw).all():
            raise ValidationError(f"site {self.site_id!r}: non-finite raw score")
        if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
            raise ValidationError(f"site {self.site_id!r}: probability outside [0, 1]")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "probability", prob)


@dataclass(frozen=True, eq=False)
class Dataset:
    series: Mapping[str, SiteSeries]
    labels: Mapping[str, SiteLabel]
    axis: TimeAxis
    split_assignment: Mapping[str, str] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        dims = {s.d for s in self.series.values()}
        if len(dims) > 1:
            raise DimensionMismatch(f"sites disagree on feature dimension: {sorted(dims)}")
        for sid, s in self.series.items():
            if s.site_id != sid:
                raise ValidationError(f"series keyed {sid!r} carries site_id {s.site_id!r}")
            if s.axis != self.axis:
                raise ValidationError(f"site {sid!r} uses a different time axis")
        for sid, lab in self.labels.items():
            if sid not in self.series:
                raise ValidationError(f"label references unknown site {sid!r}")
            if lab.event_month is not None and not 0 <= lab.event_month < self.axis.length:
                raise OutOfRange(f"site {sid!r}: event month {lab.event_month} outside [0, {self.axis.length})")
        for sid, split in self.split_assignment.items():
            if sid not in self.series:
                raise ValidationError(f"split assignment references unknown site {sid!r}")
            if split not in SPLITS:
                raise ValidationError(f"site {sid!r}: unknown split {split!r}")

    @property
    def site_ids(self) -> list[str]:
        return list(self.series)

    @property
    def d(self) -> int:
        return next(iter(self.series.values())).d if self.series else 0

    def __len__(self) -> int:
        return len(self.series)

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Values as ``(N, T, d)`` and availability as ``(N, T)``, in site order."""
        ss = list(self.series.values())
        return np.stack([s.values for s in ss]), np.stack([s.available for s in ss])

    def with_values(self, values: np.ndarray, **meta) -> "Dataset":
        """Same sites, labels and splits with replaced ``(N, T, d)`` values."""
        new = {
            sid: s.with_values(values[i]) for i, (sid, s) in enumerate(self.series.items())
        }
        return replace(self, series=new, meta={**self.meta, **meta})

    def subset(self, site_ids: Iterable[str]) -> "Dataset":
        keep = [sid for sid in site_ids]
        return Dataset(
            {sid: self.series[sid] for sid in keep},
            {sid: self.labels[sid] for sid in keep if sid in self.labels},
            self.axis,
            {sid: self.split_assignment[sid] for sid in keep if sid in self.split_assignment},
            self.meta,
        )

    def split(self, name: str) -> list[str]:
        return [sid for sid in self.series if self.split_assignment.get(sid) == name]

    def missing_fraction(self) -> float:
        _, avail = self.stack()
        return float(1.0 - avail.mean())


# ---------------------------------------------------------------------------
# Series files
# ---------------------------------------------------------------------------


def write_series(path: str | os.PathLike, values: np.ndarray, available: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    available = np.asarray(available, dtype=bool)
    T, d = values.shape
    rows = np.where(available[:, None], values, 0.0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_SERIES_HEADER.pack(SERIES_MAGIC, SERIES_VERSION, T, d))
        fh.write(available.astype(np.uint8).tobytes())
        fh.write(rows.tobytes(order="C"))


def read_series(path: str | os.PathLike, T: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``WTCH`` binary file, or a CSV file if the suffix is ``.csv``.

    Unavailable rows come back as NaN.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"series file not found: {path}")
    if path.suffix.lower() == ".csv":
        if T is None:
            raise FormatError("CSV series need the axis length from the manifest")
        return _read_series_csv(path, T)
    raw = path.read_bytes()
    if len(raw) < _SERIES_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d = _SERIES_HEADER.unpack_from(raw)
    if magic != SERIES_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SERIES_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = _SERIES_HEADER.size + n + 4 * n * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _SERIES_HEADER.size
    available = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).astype(bool)
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off + n).reshape(n, d).astype(np.float64)
    values[~available] = np.nan
    return values, available


def _read_series_csv(path: Path, T: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t" or any(h != f"f{j}" for j, h in enumerate(header[1:])):
        raise FormatError(f"{path}: header must be t,f0,...,f{{d-1}}")
    d = len(header) - 1
    values = np.full((T, d), np.nan)
    available = np.zeros(T, dtype=bool)
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            t = int(row[0])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad month index {row[0]!r}") from exc
        if not 0 <= t < T:
            raise OutOfRange(f"{path}:{lineno}: month index {t} outside [0, {T})")
        cells = [c.strip() for c in row[1:]]
        if all(not c for c in cells):
            continue
        if len(cells) != d or any(not c for c in cells):
            raise FormatError(f"{path}:{lineno}: expected {d} feature values")
        values[t] = [float(c) for c in cells]
        available[t] = True
    return values, available


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def _label_from_entry(entry: dict, axis: TimeAxis) -> SiteLabel:
    sid = str(entry["site_id"])
    looted = bool(entry.get("looted", False))
    event = None
    if entry.get("event_index") is not None:
        event = int(entry["event_index"])
    elif entry.get("event_year") is not None:
        event = month_index(axis, int(entry["event_year"]), int(entry["event_month"]))
    elif entry.get("event_month") is not None:
        # a bare event_month is read as a zero-based month index
        event = int(entry["event_month"])
    if event is not None and not 0 <= event < axis.length:
        raise OutOfRange(f"site {sid!r}: event month {event} outside [0, {axis.length})")
    return SiteLabel(sid, looted, event)


def load_dataset(manifest_path: str | os.PathLike) -> Dataset:
    """Load and validate a dataset from its JSON manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FormatError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    try:
        axis = TimeAxis(**doc["axis"])
        d = int(doc["d"])
        entries = doc["sites"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{manifest_path}: missing manifest field {exc}") from exc
    base = manifest_path.parent
    series: dict[str, SiteSeries] = {}
    splits: dict[str, str] = {}
    for entry in entries:
        sid = str(entry["site_id"])
        if sid in series:
            raise ValidationError(f"duplicate site id {sid!r}")
        values, avail = read_series(base / entry["series_file"], axis.length)
        if values.shape[0] != axis.length:
            raise DimensionMismatch(f"site {sid!r}: file has {values.shape[0]} months, axis has {axis.length}")
        if values.shape[1] != d:
            raise DimensionMismatch(f"site {sid!r}: file has d={values.shape[1]}, manifest declares d={d}")
        series[sid] = SiteSeries(sid, values, avail, axis)
        if entry.get("split") is not None:
            splits[sid] = str(entry["split"])
    labels = {}
    for entry in doc.get("labels", []):
        lab = _label_from_entry(entry, axis)
        if lab.site_id not in series:
            raise ValidationError(f"label references unknown site {lab.site_id!r}")
        labels[lab.site_id] = lab
    meta = {k: v for k, v in doc.items() if k not in ("axis", "d", "sites", "labels")}
    groups = {str(e["site_id"]): str(e["group"]) for e in entries if e.get("group") is not None}
    if groups:
        meta["groups"] = groups
    return Dataset(series, labels, axis, splits, meta)


def _safe_name(site_id: str) -> str:
    if not site_id or site_id in (".", "..") or any(c in site_id for c in "/\\\0"):
        raise ValidationError(f"site id {site_id!r} cannot be used as a file name")
    return site_id


def save_dataset(dataset: Dataset, out_dir: str | os.PathLike, manifest_name: str = "manifest.json") -> Path:
    """Write manifest plus one ``WTCH`` series file per site. Returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "series").mkdir(parents=True, exist_ok=True)
    groups = dict(dataset.meta.get("groups", {}))
    sites = []
    for sid, s in dataset.series.items():
        rel = f"series/{_safe_name(sid)}.wtch"
        write_series(out_dir / rel, s.values, s.available)
        entry = {"site_id": sid, "series_file": rel, "split": dataset.split_assignment.get(sid)}
        if sid in groups:
            entry["group"] = groups[sid]
        sites.append(entry)
    labels = []
    for sid, lab in dataset.labels.items():
        entry = {"site_id": sid, "looted": lab.looted, "event_year": None, "event_month": None}
        if lab.event_month is not None:
            entry["event_year"] = dataset.axis.year_of(lab.event_month)
            entry["event_month"] = dataset.axis.calendar_month(lab.event_month)
        labels.append(entry)
    doc = {"axis": dataset.axis.to_dict(), "d": dataset.d, "sites": sites, "labels": labels}
    doc.update({k: v for k, v in dataset.meta.items() if k != "groups"})
    path = out_dir / manifest_name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def save_scores(scores: Iterable[ScoreSeries], out_dir: str | os.PathLike) -> Path:
    """One ``<site_id>.csv`` per site (columns t, raw, probability) plus ``index.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for sc in scores:
        name = f"{_safe_name(sc.site_id)}.csv"
        lines = ["t,raw,probability"]
        lines += [f"{t},{r!r},{p!r}" for t, (r, p) in enumerate(zip(sc.raw.tolist(), sc.probability.tolist()))]
        (out_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        index.append({"site_id": sc.site_id, "file": name, "scorer": sc.scorer_tag})
    path = out_dir / "index.json"
    path.write_text(json.dumps({"scores": index}, indent=2) + "\n", encoding="utf-8")
    return path


def load_scores(score_dir: str | os.PathLike) -> dict[str, ScoreSeries]:
    score_dir = Path(score_dir)
    index_path = score_dir / "index.json"
    if not index_path.exists():
        raise FormatError(f"score index not found: {index_path}")
    out = {}
    for entry in json.loads(index_path.read_text(encoding="utf-8"))["scores"]:
        arr = np.loadtxt(score_dir / entry["file"], delimiter=",", skiprows=1, ndmin=2)
        out[entry["site_id"]] = ScoreSeries(entry["site_id"], arr[:, 1], arr[:, 2], entry["scorer"])
    return out
