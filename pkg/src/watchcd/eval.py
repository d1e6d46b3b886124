"""Top-K recall with symmetric and directional temporal margins."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .datamodel import ScoreSeries, SiteLabel
from .errors import EmptyEvaluation, ValidationError

GAP_MARGINS = tuple(range(7))


@dataclass(frozen=True)
class EvalConfig:
    K: int = 12
    margins: tuple[int, ...] = GAP_MARGINS
    window: tuple[int, int] | None = None  # half-open [start, stop) month range

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if not self.margins or min(self.margins) < 0:
            raise ValidationError("margins must be a non-empty set of non-negative integers")
        object.__setattr__(self, "margins", tuple(sorted(set(int(m) for m in self.margins))))
        if self.window is not None:
            a, b = self.window
            if not 0 <= a < b:
                raise ValidationError(f"bad evaluation window {self.window}")

    def resolve_window(self, T: int) -> tuple[int, int]:
        if self.window is None:
            return 0, T
        return self.window[0], min(self.window[1], T)


@dataclass(frozen=True)
class SiteHits:
    site_id: str
    event_month: int
    topk: tuple[int, ...]
    sym: tuple[int, ...]
    pos: tuple[int, ...]
    neg: tuple[int, ...]


@dataclass(eq=False)
class EvalReport:
    K: int
    margins: tuple[int, ...]
    r_sym: np.ndarray
    r_pos: np.ndarray
    r_neg: np.ndarray
    n_sites: int
    hits: list[SiteHits] = field(default_factory=list)

    @property
    def gap(self) -> float | None:
        """Directional gap in percentage points, or None when margins 0..6 are not all present."""
        try:
            return directional_gap(self)
        except ValidationError:
            return None

    def at(self, m: int) -> tuple[float, float, float]:
        i = self.margins.index(m)
        return float(self.r_sym[i]), float(self.r_pos[i]), float(self.r_neg[i])

    def same_as(self, other: "EvalReport") -> bool:
        return (
            self.K == other.K
            and self.margins == other.margins
            and self.n_sites == other.n_sites
            and np.array_equal(self.r_sym, other.r_sym)
            and np.array_equal(self.r_pos, other.r_pos)
            and np.array_equal(self.r_neg, other.r_neg)
            and self.hits == other.hits
        )

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "n_sites": self.n_sites,
            "margins": list(self.margins),
            "recall_sym": self.r_sym.tolist(),
            "recall_pos": self.r_pos.tolist(),
            "recall_neg": self.r_neg.tolist(),
            "directional_gap_pp": self.gap,
            "sites": [
                {
                    "site_id": h.site_id,
                    "event_month": h.event_month,
                    "topk": list(h.topk),
                    "hit_sym": list(h.sym),
                    "hit_pos": list(h.pos),
                    "hit_neg": list(h.neg),
                }
                for h in self.hits
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        hits = [
            SiteHits(s["site_id"], s["event_month"], tuple(s["topk"]), tuple(s["hit_sym"]),
                     tuple(s["hit_pos"]), tuple(s["hit_neg"]))
            for s in doc.get("sites", [])
        ]
        return cls(doc["K"], tuple(doc["margins"]), np.asarray(doc["recall_sym"], dtype=float),
                   np.asarray(doc["recall_pos"], dtype=float), np.asarray(doc["recall_neg"], dtype=float),
                   doc["n_sites"], hits)


def topk_months(probability: np.ndarray, K: int, window: tuple[int, int] | None = None) -> list[int]:
    """Indices of the K most probable months, descending, ties toward the earlier month."""
    p = np.asarray(probability, dtype=np.float64)
    lo, hi = (0, p.shape[0]) if window is None else (window[0], min(window[1], p.shape[0]))
    if K > hi - lo:
        raise ValidationError(f"K={K} exceeds the {hi - lo}-month window")
    order = np.argsort(-p[lo:hi], kind="stable")
    return (order[:K] + lo).tolist()


def hit_symmetric(topk, c: int, m: int) -> int:
    return int(any(abs(t - c) <= m for t in topk))


def hit_positive(topk, c: int, m: int) -> int:
    return int(any(0 <= t - c <= m for t in topk))


def hit_negative(topk, c: int, m: int) -> int:
    return int(any(0 <= c - t <= m for t in topk))


def _site_hits(site_id: str, topk: list[int], c: int, margins: tuple[int, ...]) -> SiteHits:
    diff = np.asarray(topk) - c
    inf = np.iinfo(np.int64).max
    near = np.abs(diff).min()
    after = diff[diff >= 0].min() if (diff >= 0).any() else inf
    before = (-diff[diff <= 0]).min() if (diff <= 0).any() else inf
    ms = np.asarray(margins)
    return SiteHits(
        site_id, c, tuple(topk),
        tuple((near <= ms).astype(int).tolist()),
        tuple((after <= ms).astype(int).tolist()),
        tuple((before <= ms).astype(int).tolist()),
    )


def _as_mapping(items, key=lambda x: x.site_id) -> dict:
    if isinstance(items, Mapping):
        return dict(items)
    return {key(x): x for x in items}


def eligible_sites(labels: Mapping[str, SiteLabel], window: tuple[int, int]) -> list[SiteLabel]:
    lo, hi = window
    return [
        lab for lab in labels.values()
        if lab.looted and lab.event_month is not None and lo <= lab.event_month < hi
    ]


def recall_suite(scores: Mapping[str, ScoreSeries] | Iterable[ScoreSeries],
                 labels: Mapping[str, SiteLabel] | Iterable[SiteLabel],
                 cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Symmetric, positive and negative recall per margin over known-month sites."""
    scores = _as_mapping(scores)
    labels = _as_mapping(labels)
    if not scores:
        raise EmptyEvaluation("no score series given")
    T = next(iter(scores.values())).probability.shape[0]
    window = cfg.resolve_window(T)
    hits = []
    for lab in sorted(eligible_sites(labels, window), key=lambda x: x.site_id):
        if lab.site_id not in scores:
            raise ValidationError(f"no scores for known-month site {lab.site_id!r}")
        topk = topk_months(scores[lab.site_id].probability, cfg.K, window)
        hits.append(_site_hits(lab.site_id, topk, lab.event_month, cfg.margins))
    if not hits:
        raise EmptyEvaluation("no site with a known event month inside the evaluation window")
    n = len(hits)
    sym = np.array([h.sym for h in hits]).sum(axis=0) / n
    pos = np.array([h.pos for h in hits]).sum(axis=0) / n
    neg = np.array([h.neg for h in hits]).sum(axis=0) / n
    return EvalReport(cfg.K, cfg.margins, sym, pos, neg, n, hits)


def directional_gap(report: EvalReport) -> float:
    """Mean of positive minus negative recall over margins 0..6, in percentage points."""
    missing = [m for m in GAP_MARGINS if m not in report.margins]
    if missing:
        raise ValidationError(f"directional gap needs margins 0..6; missing {missing}")
    idx = [report.margins.index(m) for m in GAP_MARGINS]
    return float(np.mean(report.r_pos[idx] - report.r_neg[idx]) * 100.0)


@dataclass
class MacroTable:
    margins: tuple[int, ...]
    means: dict[str, np.ndarray]
    deltas: dict[str, np.ndarray]
    embeddings: dict[str, list[str]]

    def to_dict(self) -> dict:
        return {
            "margins": list(self.margins),
            "macro_recall_sym": {k: v.tolist() for k, v in self.means.items()},
            "delta": {k: v.tolist() for k, v in self.deltas.items()},
            "embeddings": self.embeddings,
        }


def macro_average(reports: Mapping[str, Mapping[str, EvalReport]],
                  pairs: Iterable[tuple[str, str]] = (("sscd", "ted"),)) -> MacroTable:
    """Unweighted mean of symmetric recall across embeddings, per method and margin.

    ``reports[method][embedding]``; each pair ``(a, b)`` adds a delta ``a - b``
    when both methods are present.
    """
    if not reports or not any(reports.values()):
        raise ValidationError("macro average over no reports")
    margins = None
    means = {}
    for method, by_emb in reports.items():
        if not by_emb:
            raise ValidationError(f"method {method!r} has no reports")
        for rep in by_emb.values():
            if margins is None:
                margins = rep.margins
            elif rep.margins != margins:
                raise ValidationError("reports disagree on margins")
        means[method] = np.mean([rep.r_sym for rep in by_emb.values()], axis=0)
    deltas = {f"{a}-{b}": means[a] - means[b] for a, b in pairs if a in means and b in means}
    return MacroTable(margins, means, deltas, {k: sorted(v) for k, v in reports.items()})


def format_report_table(reports: Mapping[str, Mapping[str, EvalReport]]) -> str:
    """One row per method x embedding x margin with recalls in percent."""
    lines = [f"{'method':<8} {'embedding':<18} {'m':>2} {'R_sym':>7} {'R+':>7} {'R-':>7} {'N':>5}"]
    for method in sorted(reports):
        for emb in sorted(reports[method]):
            rep = reports[method][emb]
            for i, m in enumerate(rep.margins):
                lines.append(
                    f"{method:<8} {emb:<18} {m:>2} {100 * rep.r_sym[i]:7.1f} "
                    f"{100 * rep.r_pos[i]:7.1f} {100 * rep.r_neg[i]:7.1f} {rep.n_sites:>5}"
                )
    return "\n".join(lines) + "\n"


def format_macro_table(table: MacroTable) -> str:
    methods = sorted(table.means)
    head = f"{'margin':<8}" + "".join(f"{m:>9}" for m in methods) + "".join(f"{k:>12}" for k in table.deltas)
    lines = [head]
    for i, m in enumerate(table.margins):
        row = f"m={m:<6}" + "".join(f"{100 * table.means[k][i]:9.1f}" for k in methods)
        row += "".join(f"{100 * v[i]:+12.1f}" for v in table.deltas.values())
        lines.append(row)
    return "\n".join(lines) + "\n"


def format_gap_table(reports: Mapping[str, Mapping[str, EvalReport]]) -> str:
    methods = sorted(reports)
    embs = sorted({e for v in reports.values() for e in v})
    lines = [f"{'embedding':<18}" + "".join(f"{m:>9}" for m in methods)]
    for emb in embs:
        row = f"{emb:<18}"
        for m in methods:
            rep = reports[m].get(emb)
            gap = rep.gap if rep is not None else None
            row += f"{gap:+9.1f}" if gap is not None else f"{'-':>9}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def recall_curve_csv(reports: Mapping[str, Mapping[str, EvalReport]]) -> str:
    """Plot-ready recall-vs-margin series."""
    lines = ["method,embedding,margin,recall_sym,recall_pos,recall_neg"]
    for method in sorted(reports):
        for emb in sorted(reports[method]):
            rep = reports[method][emb]
            for i, m in enumerate(rep.margins):
                lines.append(f"{method},{emb},{m},{rep.r_sym[i]!r},{rep.r_pos[i]!r},{rep.r_neg[i]!r}")
    return "\n".join(lines) + "\n"


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
