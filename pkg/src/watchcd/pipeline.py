"""Glue between dataset loading, normalization, scorers and multi-grid pooling."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .datamodel import Dataset, ScoreSeries
from .errors import FingerprintMismatch, ValidationError
from .normalize import CalendarStats, apply_two_stage, cross_grid_normalize, impute_missing, pool_site
from .sscd import SscdModelBundle, sscd_score
from .ted import TedConfig, ted_score
from .ws import WsModel, ws_predict

METHODS = ("ted", "sscd", "ws")


def ensure_normalized(dataset: Dataset, stats: CalendarStats | None = None) -> Dataset:
    """Return a normalized dataset, applying frozen ``stats`` when the input is raw.

    A dataset already normalized (its meta carries a stats fingerprint) is
    returned as-is, after checking it against ``stats`` if both are present.
    """
    fp = dataset.meta.get("stats_fingerprint")
    if fp is not None:
        if stats is not None and stats.fingerprint() != fp:
            raise FingerprintMismatch(f"dataset was normalized with stats {fp}, not {stats.fingerprint()}")
        return dataset
    if stats is None:
        raise ValidationError("dataset is not normalized and no stats file was given")
    return apply_two_stage(impute_missing(dataset), stats)


def score_dataset(dataset: Dataset, method: str, ted_config: TedConfig | None = None,
                  bundle: SscdModelBundle | None = None, ws_model: WsModel | None = None) -> list[ScoreSeries]:
    """Score every site of a normalized dataset with one method."""
    fp = dataset.meta.get("stats_fingerprint")
    if method == "ted":
        cfg = ted_config or TedConfig()
        return [ted_score(s, cfg) for s in dataset.series.values()]
    if method == "sscd":
        if bundle is None:
            raise ValidationError("SSCD scoring needs a trained bundle")
        _check(bundle.stats_fingerprint, fp)
        return [sscd_score(s, bundle) for s in dataset.series.values()]
    if method == "ws":
        if ws_model is None:
            raise ValidationError("WS scoring needs a trained model")
        _check(ws_model.stats_fingerprint, fp)
        return [ws_predict(ws_model, s) for s in dataset.series.values()]
    raise ValidationError(f"unknown method {method!r}")


def _check(model_fp: str | None, data_fp: str | None) -> None:
    if model_fp is not None and data_fp is not None and model_fp != data_fp:
        raise FingerprintMismatch(f"model trained against stats {model_fp}, data normalized with {data_fp}")


def grid_groups(dataset: Dataset) -> dict[str, list[str]]:
    """Parent site -> grid-cell site ids; ungrouped entries form their own group."""
    groups = dataset.meta.get("groups", {})
    out: dict[str, list[str]] = defaultdict(list)
    for sid in dataset.site_ids:
        out[groups.get(sid, sid)].append(sid)
    return dict(out)


def pool_groups(scores: dict[str, ScoreSeries], groups: dict[str, list[str]], mode: str = "max",
                field: str = "probability") -> dict[str, dict[str, np.ndarray]]:
    """Cross-grid normalize then pool each group; also pool the unnormalized scores."""
    out = {}
    for site, cells in groups.items():
        if not cells:
            raise ValidationError(f"site {site!r} has no grid cells")
        G = np.stack([getattr(scores[c], field) for c in cells])
        out[site] = {
            "pooled": pool_site(cross_grid_normalize(G), mode),
            "pooled_score": pool_site(G, mode),
        }
    return out
