"""Weakly supervised monthly localizer.

Per-month MLP encoder (LayerNorm on its projection) feeding a unidirectional
2-layer LSTM and a per-step logit head. Looted sites with a known month up to
the cutoff get a Gaussian bump target, preserved sites an all-zero target, and
looted sites without a usable month are left out of training entirely.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.special import erf
from torch import nn

from ._binio import read_container, write_container
from .datamodel import Dataset, ScoreSeries, SiteLabel, SiteSeries
from .errors import DimensionMismatch, FingerprintMismatch, TrainingDiverged, ValidationError

log = logging.getLogger(__name__)

MODEL_MAGIC = b"WTCW"
MODEL_VERSION = 1
POSITIVE_THRESHOLD = 0.05


@dataclass(frozen=True)
class WsConfig:
    encoder_dim: int = 128
    hidden: int = 128
    layers: int = 2
    sigma_w: float = 2.0
    c_end: int = 47
    w_pos: float | None = None  # None: ratio of negative to positive target cells
    oversample_factor: int = 4
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    patience: int = 10
    max_epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValidationError("sigma_w must be positive")
        if self.c_end < 0:
            raise ValidationError("c_end must be a month index")
        if self.oversample_factor < 1:
            raise ValidationError("oversample_factor must be >= 1")
        if min(self.encoder_dim, self.hidden, self.layers, self.max_epochs, self.batch_size) < 1:
            raise ValidationError("sizes and epoch counts must be positive")


def known_idx(label: SiteLabel, c_end: int) -> int:
    if label.looted and label.event_month is not None and label.event_month <= c_end:
        return label.event_month
    return -1


def build_targets(label: SiteLabel, T: int, sigma_w: float = 2.0, c_end: int = 47) -> np.ndarray | None:
    """Per-month training target, or None when the site must be left out."""
    if not label.looted:
        return np.zeros(T)
    c = known_idx(label, c_end)
    if c < 0:
        return None
    t = np.arange(T)
    return np.exp(-((t - c) ** 2) / (2.0 * sigma_w**2))


@dataclass(frozen=True, eq=False)
class TrainingItem:
    site_id: str
    x: np.ndarray
    y: np.ndarray


def assemble_training_set(dataset: Dataset, cfg: WsConfig = WsConfig(), split: str | None = "train",
                          oversample: bool = True) -> list[TrainingItem]:
    """Eligible sites of ``split`` (all sites if None), known-month positives repeated.

    Warns when no positive site survives; training then sees negatives only.
    """
    if cfg.c_end >= dataset.axis.length:
        raise ValidationError(f"c_end={cfg.c_end} outside the {dataset.axis.length}-month axis")
    ids = dataset.site_ids if split is None else dataset.split(split)
    items = []
    n_pos = 0
    for sid in ids:
        lab = dataset.labels.get(sid, SiteLabel(sid, False))
        y = build_targets(lab, dataset.axis.length, cfg.sigma_w, cfg.c_end)
        if y is None:
            continue
        x = dataset.series[sid].values
        if not np.isfinite(x).all():
            raise ValidationError(f"site {sid!r} has unfilled months; normalize first")
        reps = cfg.oversample_factor if (lab.looted and oversample) else 1
        n_pos += int(lab.looted)
        items.extend(TrainingItem(sid, x, y) for _ in range(reps))
    if n_pos == 0 and items and oversample:
        warnings.warn("no known-month positive site in the training set; training on negatives only", stacklevel=2)
    return items


def positive_weight(items: list[TrainingItem]) -> float:
    y = np.concatenate([it.y for it in items]) if items else np.zeros(0)
    pos = int((y >= POSITIVE_THRESHOLD).sum())
    return float((y < POSITIVE_THRESHOLD).sum() / pos) if pos else 1.0


def weighted_bce(logits: torch.Tensor, target: torch.Tensor, w_pos: float) -> torch.Tensor:
    """Mean per-step BCE from logits with the positive term scaled by ``w_pos``."""
    return nn.functional.binary_cross_entropy_with_logits(
        logits, target, pos_weight=torch.tensor(w_pos, dtype=logits.dtype)
    )


class WsNet(nn.Module):
    def __init__(self, d: int, encoder_dim: int = 128, hidden: int = 128, layers: int = 2):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Linear(d, encoder_dim), nn.GELU(), nn.Linear(encoder_dim, encoder_dim), nn.LayerNorm(encoder_dim)
        )
        self.lstm = nn.LSTM(encoder_dim, hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden, 1)
        with torch.no_grad():
            for layer in range(layers):
                getattr(self.lstm, f"bias_ih_l{layer}")[hidden:2 * hidden].fill_(1.0)
                getattr(self.lstm, f"bias_hh_l{layer}")[hidden:2 * hidden].fill_(0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self.lstm(self.encoder(x))
        return self.head(h).squeeze(-1)


@dataclass(eq=False)
class WsModel:
    config: WsConfig
    d: int
    net: WsNet
    w_pos: float
    stats_fingerprint: str | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._np = None

    def params(self) -> dict[str, np.ndarray]:
        if self._np is None:
            self._np = {k: v.detach().double().numpy() for k, v in self.net.state_dict().items()}
        return self._np

    def save(self, path: str | os.PathLike) -> None:
        arrays = {k: v.detach().numpy().astype(np.float32) for k, v in self.net.state_dict().items()}
        header = {
            "kind": "ws",
            "d": self.d,
            "config": json.loads(json.dumps(asdict(self.config))),
            "seed": self.config.seed,
            "w_pos": self.w_pos,
            "stats_fingerprint": self.stats_fingerprint,
            "history": self.history,
        }
        write_container(path, MODEL_MAGIC, MODEL_VERSION, header, arrays)

    @classmethod
    def load(cls, path: str | os.PathLike, expected_fingerprint: str | None = None) -> "WsModel":
        header, arrays = read_container(path, MODEL_MAGIC, MODEL_VERSION)
        if header.get("kind") != "ws":
            raise ValidationError(f"{path} is not a WS model")
        stored = header.get("stats_fingerprint")
        if expected_fingerprint is not None and stored != expected_fingerprint:
            raise FingerprintMismatch(
                f"model was trained against normalization stats {stored}, data was normalized with {expected_fingerprint}"
            )
        cfg = WsConfig(**header["config"])
        net = WsNet(header["d"], cfg.encoder_dim, cfg.hidden, cfg.layers)
        net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
        net.eval()
        return cls(cfg, header["d"], net, header["w_pos"], stored, header.get("history", []))


def _batches(items: list[TrainingItem]):
    x = torch.from_numpy(np.stack([it.x for it in items]).astype(np.float32))
    y = torch.from_numpy(np.stack([it.y for it in items]).astype(np.float32))
    return x, y


def train_ws(items: list[TrainingItem], cfg: WsConfig = WsConfig(), val_items: list[TrainingItem] | None = None,
             stats_fingerprint: str | None = None) -> WsModel:
    """Adam with weight decay, gradient clipping and early stopping on validation loss.

    Without validation items the training loss drives early stopping.
    """
    if not items:
        raise ValidationError("empty training collection")
    d = items[0].x.shape[1]
    w_pos = cfg.w_pos if cfg.w_pos is not None else positive_weight(items)
    X, Y = _batches(items)
    val = _batches(val_items) if val_items else None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = WsNet(d, cfg.encoder_dim, cfg.hidden, cfg.layers)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    best, best_state, stale = float("inf"), None, 0
    history = []
    for epoch in range(cfg.max_epochs):
        net.train()
        perm = torch.randperm(X.shape[0], generator=gen)
        total, nb = 0.0, 0
        for start in range(0, X.shape[0], cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss = weighted_bce(net(X[idx]), Y[idx], w_pos)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite WS loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            total += float(loss.detach())
            nb += 1
        record = {"epoch": epoch, "train_loss": total / nb}
        if val is not None:
            net.eval()
            with torch.no_grad():
                record["val_loss"] = float(weighted_bce(net(val[0]), val[1], w_pos))
        history.append(record)
        log.debug("ws epoch %d: %s", epoch, record)
        monitor = record.get("val_loss", record["train_loss"])
        if monitor < best:
            best, stale = monitor, 0
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.load_state_dict(best_state)
    net.eval()
    return WsModel(cfg, d, net, w_pos, stats_fingerprint, history)


def train_ws_on(dataset: Dataset, cfg: WsConfig = WsConfig(), stats_fingerprint: str | None = None) -> WsModel:
    """Assemble train/val collections from the dataset's splits and train."""
    items = assemble_training_set(dataset, cfg, "train")
    val_items = assemble_training_set(dataset, cfg, "val", oversample=False)
    return train_ws(items, cfg, val_items or None, stats_fingerprint)


# ---------------------------------------------------------------------------
# Inference: explicit month-by-month recurrence in float64, so every output
# depends only on months up to and including its own.
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def ws_logits(model: WsModel, x: np.ndarray) -> np.ndarray:
    p = model.params()
    cfg = model.config
    H = cfg.hidden
    ln_eps = model.net.encoder[3].eps
    h = [np.zeros(H) for _ in range(cfg.layers)]
    c = [np.zeros(H) for _ in range(cfg.layers)]
    out = np.empty(x.shape[0])
    for t in range(x.shape[0]):
        e = _gelu(p["encoder.0.weight"] @ x[t] + p["encoder.0.bias"])
        e = p["encoder.2.weight"] @ e + p["encoder.2.bias"]
        e = (e - e.mean()) / np.sqrt(e.var() + ln_eps) * p["encoder.3.weight"] + p["encoder.3.bias"]
        inp = e
        for k in range(cfg.layers):
            g = (p[f"lstm.weight_ih_l{k}"] @ inp + p[f"lstm.bias_ih_l{k}"]
                 + p[f"lstm.weight_hh_l{k}"] @ h[k] + p[f"lstm.bias_hh_l{k}"])
            i_g, f_g, g_g, o_g = _sigmoid(g[:H]), _sigmoid(g[H:2 * H]), np.tanh(g[2 * H:3 * H]), _sigmoid(g[3 * H:])
            c[k] = f_g * c[k] + i_g * g_g
            h[k] = o_g * np.tanh(c[k])
            inp = h[k]
        out[t] = p["head.weight"][0] @ inp + p["head.bias"][0]
    return out


def ws_predict(model: WsModel, series: SiteSeries) -> ScoreSeries:
    if series.d != model.d:
        raise DimensionMismatch(f"series has d={series.d}, model expects d={model.d}")
    x = np.asarray(series.values, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValidationError(f"site {series.site_id!r} has unfilled months")
    logits = ws_logits(model, x)
    return ScoreSeries(series.site_id, logits, _sigmoid(logits), "ws")
