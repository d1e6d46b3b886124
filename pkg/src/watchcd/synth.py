"""Seeded synthetic site datasets and a brute-force recall evaluator.

Each site is a per-dimension 12-month sinusoid plus Gaussian noise. Looted
sites add a change (step, ramp or transient) on a random quarter of the
dimensions starting at their event month, optionally ``precursor_lead`` months
early. Values are rounded to float32 so generated datasets survive the binary
format unchanged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

import numpy as np

from .datamodel import Dataset, ScoreSeries, SiteLabel, SiteSeries, TimeAxis
from .errors import EmptyEvaluation, ValidationError

CHANGE_MODELS = ("step", "ramp", "transient")


@dataclass(frozen=True)
class SynthSpec:
    n_sites: int = 200
    T: int = 96
    d: int = 32
    seasonal_amplitude: float = 1.0
    noise_sigma: float = 1.0
    change_model: str = "step"
    magnitude: float = 5.0  # in units of noise_sigma; absolute when noise_sigma == 0
    ramp_length: int = 4
    transient_length: int = 2
    change_dim_fraction: float = 0.25
    precursor_lead: int = 0
    looted_fraction: float = 0.5
    known_fraction: float = 1.0
    missing_fraction: float = 0.0
    event_range: tuple[int, int] | None = None  # inclusive; defaults to the whole axis
    nuisance_transients: int = 0  # unlabeled transients per site
    nuisance_magnitude: float = 5.0
    nuisance_length: int = 1
    site_offset_sigma: float = 0.0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    origin_year: int = 2017
    origin_month: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("looted_fraction", "known_fraction", "missing_fraction", "change_dim_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        if self.change_model not in CHANGE_MODELS:
            raise ValidationError(f"unknown change model {self.change_model!r}")
        if self.n_sites < 1 or self.T < 1 or self.d < 1:
            raise ValidationError("n_sites, T and d must be positive")
        if self.event_range is not None:
            lo, hi = self.event_range
            if not 0 <= lo <= hi < self.T:
                raise ValidationError(f"event_range {self.event_range} outside the axis")
            object.__setattr__(self, "event_range", (int(lo), int(hi)))
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")
        object.__setattr__(self, "split_fractions", tuple(self.split_fractions))

    @property
    def change_scale(self) -> float:
        return self.magnitude * (self.noise_sigma if self.noise_sigma > 0 else 1.0)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthSpec":
        doc = dict(doc)
        for key in ("event_range", "split_fractions"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def change_profile(spec: SynthSpec, onset: int, T: int) -> np.ndarray:
    """Offset multiplier over time (0..1) for a change starting at ``onset``."""
    t = np.arange(T)
    since = t - onset
    if spec.change_model == "step":
        return (since >= 0).astype(float)
    if spec.change_model == "ramp":
        return np.clip((since + 1) / max(spec.ramp_length, 1), 0.0, 1.0) * (since >= 0)
    return ((since >= 0) & (since < spec.transient_length)).astype(float)


def generate_dataset(spec: SynthSpec) -> Dataset:
    """Build a dataset with ground-truth labels; deterministic per ``spec.seed``.

    ``meta["truth"]`` records the event month of every looted site, known or not.
    """
    if spec.T < 12 and spec.seasonal_amplitude > 0:
        warnings.warn("fewer than 12 months: the seasonal cycle is not identifiable", stacklevel=2)
    axis = TimeAxis(spec.origin_year, spec.origin_month, spec.T)
    master = np.random.default_rng([spec.seed, 0])
    phase = master.uniform(0.0, 2 * np.pi, size=spec.d)
    n_looted = int(round(spec.looted_fraction * spec.n_sites))
    order = master.permutation(spec.n_sites)
    looted = np.zeros(spec.n_sites, dtype=bool)
    looted[order[:n_looted]] = True
    n_known = int(round(spec.known_fraction * n_looted))
    known = np.zeros(spec.n_sites, dtype=bool)
    known[order[:n_known]] = True
    lo, hi = spec.event_range if spec.event_range is not None else (0, spec.T - 1)
    split_draw = master.permutation(spec.n_sites)
    n_train = int(round(spec.split_fractions[0] * spec.n_sites))
    n_val = int(round(spec.split_fractions[1] * spec.n_sites))
    split_of = np.empty(spec.n_sites, dtype=object)
    split_of[split_draw[:n_train]] = "train"
    split_of[split_draw[n_train:n_train + n_val]] = "val"
    split_of[split_draw[n_train + n_val:]] = "test"
    n_missing = int(round(spec.missing_fraction * spec.n_sites * spec.T))
    missing_cells = master.choice(spec.n_sites * spec.T, size=n_missing, replace=False)
    avail_all = np.ones(spec.n_sites * spec.T, dtype=bool)
    avail_all[missing_cells] = False
    avail_all = avail_all.reshape(spec.n_sites, spec.T)

    season = spec.seasonal_amplitude * np.sin(
        2 * np.pi * (axis.calendar_months()[:, None] / 12.0) + phase[None, :]
    )
    n_change_dims = max(1, int(round(spec.change_dim_fraction * spec.d)))
    width = len(str(spec.n_sites - 1))
    series, labels, splits, truth = {}, {}, {}, {}
    for i in range(spec.n_sites):
        rng = np.random.default_rng([spec.seed, 1, i])
        sid = f"site{i:0{width}d}"
        values = season + spec.noise_sigma * rng.standard_normal((spec.T, spec.d))
        if spec.site_offset_sigma > 0:
            values = values + spec.site_offset_sigma * rng.standard_normal(spec.d)
        event = int(rng.integers(lo, hi + 1))
        dims = rng.choice(spec.d, size=n_change_dims, replace=False)
        signs = rng.choice([-1.0, 1.0], size=n_change_dims)
        if looted[i]:
            onset = max(0, event - spec.precursor_lead)
            prof = change_profile(spec, onset, spec.T)
            values[:, dims] += spec.change_scale * prof[:, None] * signs[None, :]
            truth[sid] = event
        for _ in range(spec.nuisance_transients):
            start = int(rng.integers(0, spec.T))
            ndims = rng.choice(spec.d, size=n_change_dims, replace=False)
            nsigns = rng.choice([-1.0, 1.0], size=n_change_dims)
            span = slice(start, min(spec.T, start + spec.nuisance_length))
            scale = spec.nuisance_magnitude * (spec.noise_sigma if spec.noise_sigma > 0 else 1.0)
            values[span, ndims] += scale * nsigns
        values = values.astype(np.float32).astype(np.float64)
        avail = avail_all[i]
        values[~avail] = np.nan
        series[sid] = SiteSeries(sid, values, avail, axis)
        labels[sid] = SiteLabel(sid, bool(looted[i]), event if (looted[i] and known[i]) else None)
        splits[sid] = str(split_of[i])
    meta = {"truth": truth, "synth_spec": _spec_doc(spec)}
    return Dataset(series, labels, axis, splits, meta)


def _spec_doc(spec: SynthSpec) -> dict:
    doc = asdict(spec)
    for k, v in doc.items():
        if isinstance(v, tuple):
            doc[k] = list(v)
    return doc


def _by_site(items) -> dict:
    if isinstance(items, Mapping):
        return dict(items)
    return {x.site_id: x for x in items}


def oracle_recall(scores: Mapping[str, ScoreSeries] | Iterable[ScoreSeries],
                  labels: Mapping[str, SiteLabel] | Iterable[SiteLabel],
                  cfg=None):
    """Exhaustive re-derivation of the recall suite.

    Ranks every month with a plain sort and scans every (site, margin,
    prediction) triple without early exit. Shares no logic with
    :func:`watchcd.eval.recall_suite`.
    """
    from .eval import EvalConfig, EvalReport, SiteHits

    cfg = cfg or EvalConfig()
    scores = _by_site(scores)
    labels = _by_site(labels)
    if not scores:
        raise EmptyEvaluation("no score series given")
    T = len(next(iter(scores.values())).probability)
    lo, hi = (0, T) if cfg.window is None else (cfg.window[0], min(cfg.window[1], T))
    site_ids = sorted(labels)
    hits = []
    for sid in site_ids:
        lab = labels[sid]
        if not lab.looted or lab.event_month is None:
            continue
        c = lab.event_month
        if c < lo or c >= hi:
            continue
        if sid not in scores:
            raise ValidationError(f"no scores for known-month site {sid!r}")
        if cfg.K > hi - lo:
            raise ValidationError(f"K={cfg.K} exceeds the {hi - lo}-month window")
        p = scores[sid].probability
        ranked = sorted(range(lo, hi), key=lambda t: (-float(p[t]), t))[: cfg.K]
        sym, pos, neg = [], [], []
        for m in cfg.margins:
            s = a = b = 0
            for t in ranked:
                if -m <= t - c <= m:
                    s = 1
                if c <= t <= c + m:
                    a = 1
                if c - m <= t <= c:
                    b = 1
            sym.append(s)
            pos.append(a)
            neg.append(b)
        hits.append(SiteHits(sid, c, tuple(ranked), tuple(sym), tuple(pos), tuple(neg)))
    if not hits:
        raise EmptyEvaluation("no site with a known event month inside the evaluation window")
    n = len(hits)
    cols = range(len(cfg.margins))
    r_sym = np.array([sum(h.sym[j] for h in hits) / n for j in cols])
    r_pos = np.array([sum(h.pos[j] for h in hits) / n for j in cols])
    r_neg = np.array([sum(h.neg[j] for h in hits) / n for j in cols])
    return EvalReport(cfg.K, tuple(cfg.margins), r_sym, r_pos, r_neg, n, hits)
