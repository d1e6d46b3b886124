"""Self-supervised change scorer.

Three per-month signals, each calendar-calibrated and robustly z-scored per
site, then combined with fixed weights:

* reconstruction error of a masked autoencoder,
* error of a next-month forecaster fed the previous three months,
* mean latent distance to the ``knn_k`` nearest neighbours in a bank of
  training latents (larger means lower density, i.e. more novel).

The autoencoder and forecaster are trained jointly with reconstruction,
forecasting, InfoNCE temporal contrastive and Barlow Twins losses.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from torch import nn

from ._binio import read_container, write_container
from .datamodel import Dataset, ScoreSeries, SiteSeries, TimeAxis
from .errors import DimensionMismatch, FingerprintMismatch, TrainingDiverged, ValidationError
from .ted import minmax_probability

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826
CONTEXT_MONTHS = 3
BUNDLE_MAGIC = b"WTCB"
BUNDLE_VERSION = 1
SIGNALS = ("rec", "fore", "nov")


@dataclass(frozen=True)
class SscdConfig:
    latent_dim: int = 32
    hidden_dim: int = 128
    mask_ratio: float = 0.25
    knn_k: int = 5
    weights: tuple[float, float, float] = (0.6, 0.3, 0.4)  # rec, fore, nov
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 0.1, 0.01)  # rec, fore, contrast, bt
    bt_offdiag: float = 5e-3
    temperature: float = 0.1
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    patience: int = 10
    epsilon: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValidationError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if min(self.latent_dim, self.hidden_dim, self.knn_k, self.epochs, self.batch_size) < 1:
            raise ValidationError("dimensions, knn_k, epochs and batch_size must be positive")
        if len(self.weights) != 3 or min(self.weights) <= 0:
            raise ValidationError("ensemble weights must be three positive numbers")
        if len(self.loss_weights) != 4 or min(self.loss_weights) < 0:
            raise ValidationError("loss weights must be four non-negative numbers")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))

    @classmethod
    def from_dict(cls, doc: dict) -> "SscdConfig":
        doc = dict(doc)
        for key in ("weights", "loss_weights"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


# ---------------------------------------------------------------------------
# Networks and losses
# ---------------------------------------------------------------------------


def _mlp(n_in: int, n_hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, n_hidden), nn.GELU(), nn.Linear(n_hidden, n_out))


class SscdNet(nn.Module):
    def __init__(self, d: int, latent_dim: int, hidden_dim: int, context: int = CONTEXT_MONTHS):
        super().__init__()
        self.d = d
        self.context = context
        self.encoder = _mlp(d, hidden_dim, latent_dim)
        self.decoder = _mlp(latent_dim, hidden_dim, d)
        self.forecaster = _mlp(context * d, hidden_dim, d)


def forecast_context(x, context: int = CONTEXT_MONTHS):
    """Rows ``[x[t-context], ..., x[t-1]]`` flattened, zero-padded before the series start.

    Works on ``(T, d)`` or ``(B, T, d)`` arrays or tensors.
    """
    is_torch = isinstance(x, torch.Tensor)
    lib = torch if is_torch else np
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, T, d = x.shape
    pad = lib.zeros((B, context, d), dtype=x.dtype)
    xp = lib.cat([pad, x], 1) if is_torch else np.concatenate([pad, x], axis=1)
    ctx = lib.stack([xp[:, k:k + T] for k in range(context)], 2 if is_torch else 2)
    ctx = ctx.reshape(B, T, context * d)
    return ctx[0] if squeeze else ctx


def reconstruction_loss(net: SscdNet, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Squared error on masked entries only; ``mask`` is True where the input was zeroed."""
    recon = net.decoder(net.encoder(x * (~mask)))
    m = mask.to(x.dtype)
    return ((recon - x) ** 2 * m).sum() / m.sum().clamp_min(1.0)


def forecast_loss(net: SscdNet, ctx: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((net.forecaster(ctx) - target) ** 2).mean()


def contrastive_loss(latents: torch.Tensor, anchors: torch.Tensor, positives: torch.Tensor,
                     temperature: float = 0.1) -> torch.Tensor:
    """InfoNCE: each anchor must pick its positive among every other latent in the batch."""
    # clamp before the root: sqrt has an infinite derivative at 0
    h = latents / latents.pow(2).sum(1, keepdim=True).clamp_min(1e-24).sqrt()
    logits = h[anchors] @ h.T / temperature
    self_mask = torch.zeros_like(logits, dtype=torch.bool)
    self_mask[torch.arange(anchors.shape[0]), anchors] = True
    logits = logits.masked_fill(self_mask, float("-inf"))
    return nn.functional.cross_entropy(logits, positives)


def cross_correlation(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    def standardize(z):
        c = z - z.mean(0)
        return c / c.pow(2).mean(0).clamp_min(1e-24).sqrt()

    return standardize(z1).T @ standardize(z2) / z1.shape[0]


def barlow_twins_loss(z1: torch.Tensor, z2: torch.Tensor, offdiag: float = 5e-3) -> torch.Tensor:
    c = cross_correlation(z1, z2)
    diag = torch.diagonal(c)
    return ((1.0 - diag) ** 2).sum() + offdiag * ((c**2).sum() - (diag**2).sum())


def random_mask(n: int, d: int, ratio: float, gen: torch.Generator) -> torch.Tensor:
    """Exactly ``max(1, round(ratio * d))`` masked dimensions per row."""
    n_mask = max(1, int(round(ratio * d)))
    ranks = torch.rand((n, d), generator=gen).argsort(dim=1).argsort(dim=1)
    return ranks < n_mask


def batch_losses(net: SscdNet, X: torch.Tensor, cfg: SscdConfig, gen: torch.Generator) -> dict[str, torch.Tensor]:
    """All four loss components for a batch of whole site sequences ``(B, T, d)``."""
    B, T, d = X.shape
    x = X.reshape(B * T, d)
    m1 = random_mask(B * T, d, cfg.mask_ratio, gen)
    m2 = random_mask(B * T, d, cfg.mask_ratio, gen)
    out = {"rec": reconstruction_loss(net, x, m1)}
    if T > 1:
        ctx = forecast_context(X, net.context)[:, 1:].reshape(-1, net.context * d)
        out["fore"] = forecast_loss(net, ctx, X[:, 1:].reshape(-1, d))
        h = net.encoder(x)
        idx = torch.arange(B * T).reshape(B, T)
        out["contrast"] = contrastive_loss(h, idx[:, :-1].reshape(-1), idx[:, 1:].reshape(-1), cfg.temperature)
    else:
        out["fore"] = out["contrast"] = x.sum() * 0.0
    z1 = net.encoder(x * (~m1))
    z2 = net.encoder(x * (~m2))
    out["bt"] = barlow_twins_loss(z1, z2, cfg.bt_offdiag)
    lw = cfg.loss_weights
    out["total"] = lw[0] * out["rec"] + lw[1] * out["fore"] + lw[2] * out["contrast"] + lw[3] * out["bt"]
    return out


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SscdModelBundle:
    config: SscdConfig
    d: int
    net: SscdNet
    bank: np.ndarray  # (n, latent_dim) float32
    bank_sites: list[str]
    bank_months: np.ndarray  # (n,) int
    calib_median: np.ndarray  # (3, 12)
    calib_mad: np.ndarray  # (3, 12)
    stats_fingerprint: str | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._site_rows = {}
        for i, sid in enumerate(self.bank_sites):
            self._site_rows.setdefault(sid, []).append(i)

    @property
    def knn_k(self) -> int:
        return self.config.knn_k

    @property
    def context(self) -> int:
        return self.net.context

    def _run(self, module: nn.Module, x: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return module(torch.from_numpy(np.asarray(x, dtype=np.float32))).double().numpy()

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self._run(self.net.encoder, x)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            t = torch.from_numpy(np.asarray(x, dtype=np.float32))
            return self.net.decoder(self.net.encoder(t)).double().numpy()

    def forecast(self, ctx: np.ndarray) -> np.ndarray:
        return self._run(self.net.forecaster, ctx)

    def self_rows(self, site_id: str, T: int) -> np.ndarray:
        """Bank row holding (site_id, t) for each t, or -1."""
        rows = np.full(T, -1, dtype=np.int64)
        for i in self._site_rows.get(site_id, ()):
            t = int(self.bank_months[i])
            if t < T:
                rows[t] = i
        return rows

    def save(self, path: str | os.PathLike) -> None:
        arrays = {f"param/{k}": v.detach().cpu().numpy().astype(np.float32)
                  for k, v in self.net.state_dict().items()}
        arrays.update({
            "bank": self.bank.astype(np.float32),
            "bank_months": self.bank_months.astype(np.int32),
            "calib_median": self.calib_median.astype(np.float64),
            "calib_mad": self.calib_mad.astype(np.float64),
        })
        header = {
            "kind": "sscd",
            "d": self.d,
            "config": _config_doc(self.config),
            "seed": self.config.seed,
            "stats_fingerprint": self.stats_fingerprint,
            "bank_sites": self.bank_sites,
            "history": self.history,
        }
        write_container(path, BUNDLE_MAGIC, BUNDLE_VERSION, header, arrays)

    @classmethod
    def load(cls, path: str | os.PathLike, expected_fingerprint: str | None = None) -> "SscdModelBundle":
        header, arrays = read_container(path, BUNDLE_MAGIC, BUNDLE_VERSION)
        if header.get("kind") != "sscd":
            raise ValidationError(f"{path} is not an SSCD bundle")
        _check_fingerprint(header.get("stats_fingerprint"), expected_fingerprint)
        cfg = SscdConfig.from_dict(header["config"])
        net = SscdNet(header["d"], cfg.latent_dim, cfg.hidden_dim)
        state = {k[len("param/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("param/")}
        net.load_state_dict(state)
        net.eval()
        return cls(cfg, header["d"], net, arrays["bank"], list(header["bank_sites"]),
                   arrays["bank_months"].astype(np.int64), arrays["calib_median"], arrays["calib_mad"],
                   header.get("stats_fingerprint"), header.get("history", []))


def _config_doc(cfg) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def _check_fingerprint(stored: str | None, expected: str | None) -> None:
    if expected is not None and stored != expected:
        raise FingerprintMismatch(
            f"model was trained against normalization stats {stored}, data was normalized with {expected}"
        )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _tensor(dataset: Dataset, ids: list[str]) -> torch.Tensor:
    arr = np.stack([dataset.series[s].values for s in ids]).astype(np.float32)
    if not np.isfinite(arr).all():
        raise ValidationError("dataset has unfilled months; normalize (with imputation) first")
    return torch.from_numpy(arr)


def train_sscd(dataset: Dataset, cfg: SscdConfig = SscdConfig(),
               stats_fingerprint: str | None = None) -> SscdModelBundle:
    """Fit the SSCD networks on every site, then build the latent bank and calibration.

    Early stopping watches the total loss on the ``val`` split when one exists
    (masks fixed across epochs), otherwise the mean training loss.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    ids = dataset.site_ids
    X = _tensor(dataset, ids)
    val_ids = dataset.split("val")
    Xval = _tensor(dataset, val_ids) if val_ids else None
    d = dataset.d
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = SscdNet(d, cfg.latent_dim, cfg.hidden_dim)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    best, best_state, stale = float("inf"), None, 0
    history = []
    for epoch in range(cfg.epochs):
        net.train()
        perm = torch.randperm(len(ids), generator=gen)
        sums = {k: 0.0 for k in ("rec", "fore", "contrast", "bt", "total")}
        nb = 0
        for start in range(0, len(ids), cfg.batch_size):
            batch = X[perm[start:start + cfg.batch_size]]
            losses = batch_losses(net, batch, cfg, gen)
            if not all(torch.isfinite(v) for v in losses.values()):
                raise TrainingDiverged(
                    f"non-finite SSCD loss at epoch {epoch}: "
                    + ", ".join(f"{k}={float(v):.4g}" for k, v in losses.items())
                )
            opt.zero_grad()
            losses["total"].backward()
            nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            for k in sums:
                sums[k] += float(losses[k].detach())
            nb += 1
        record = {"epoch": epoch, **{k: v / nb for k, v in sums.items()}}
        if Xval is not None:
            net.eval()
            with torch.no_grad():
                vgen = torch.Generator().manual_seed(cfg.seed + 2)
                record["val_total"] = float(batch_losses(net, Xval, cfg, vgen)["total"])
        monitor = record.get("val_total", record["total"])
        history.append(record)
        log.debug("sscd epoch %d: %s", epoch, record)
        if monitor < best:
            best, stale = monitor, 0
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    with torch.no_grad():
        bank = net.encoder(X.reshape(-1, d)).numpy().astype(np.float32)
    T = X.shape[1]
    bundle = SscdModelBundle(
        cfg, d, net, bank,
        [sid for sid in ids for _ in range(T)],
        np.tile(np.arange(T), len(ids)),
        np.zeros((3, 12)), np.ones((3, 12)),
        stats_fingerprint, history,
    )
    bundle.calib_median, bundle.calib_mad = fit_calibration(
        [sscd_signals(dataset.series[sid], bundle) for sid in ids], dataset.axis
    )
    return bundle


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def knn_novelty(latents: np.ndarray, bank: np.ndarray, k: int, exclude: np.ndarray | None = None) -> np.ndarray:
    """Mean Euclidean distance from each latent to its ``k`` nearest bank rows.

    ``exclude[t]`` names a bank row to skip for query ``t`` (its own entry),
    or -1. Candidates are shortlisted with a BLAS distance matrix and their
    distances recomputed exactly, so duplicates come out at exactly zero.
    """
    q = np.asarray(latents, dtype=np.float64)
    b = np.asarray(bank, dtype=np.float64)
    n = b.shape[0]
    k_eff = min(k, n - (1 if exclude is not None and (exclude >= 0).any() else 0))
    if k_eff < 1:
        raise ValidationError("latent bank too small for the requested k")
    d2 = (q**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2.0 * q @ b.T
    if exclude is not None:
        rows = np.nonzero(exclude >= 0)[0]
        d2[rows, exclude[rows]] = np.inf
    n_cand = min(n, k_eff + 16)
    cand = np.argpartition(d2, n_cand - 1, axis=1)[:, :n_cand]
    exact = np.sqrt(((q[:, None, :] - b[cand]) ** 2).sum(-1))
    if exclude is not None:
        exact[cand == exclude[:, None]] = np.inf
    exact.sort(axis=1)
    return exact[:, :k_eff].mean(axis=1)


def sscd_signals(series: SiteSeries, bundle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-month reconstruction error, forecast error and latent novelty."""
    if series.d != bundle.d:
        raise DimensionMismatch(f"series has d={series.d}, bundle expects d={bundle.d}")
    x = np.asarray(series.values, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValidationError(f"site {series.site_id!r} has unfilled months")
    e_rec = ((bundle.reconstruct(x) - x) ** 2).mean(axis=1)
    e_fore = ((bundle.forecast(forecast_context(x, bundle.context)) - x) ** 2).mean(axis=1)
    e_fore[0] = 0.0
    e_nov = knn_novelty(bundle.encode(x), bundle.bank, bundle.knn_k, bundle.self_rows(series.site_id, series.T))
    return e_rec, e_fore, e_nov


def fit_calibration(signals: list[tuple[np.ndarray, ...]], axis: TimeAxis) -> tuple[np.ndarray, np.ndarray]:
    """Per-signal, per-calendar-month median and MAD pooled over sites and years."""
    months = axis.calendar_months()
    med = np.zeros((3, 12))
    mad = np.zeros((3, 12))
    for j in range(3):
        block = np.stack([s[j] for s in signals])
        for m in range(12):
            vals = block[:, months == m].ravel()
            if vals.size:
                med[j, m] = np.median(vals)
                mad[j, m] = np.median(np.abs(vals - med[j, m]))
    return med, mad


def calendar_calibrate(signal: np.ndarray, axis: TimeAxis, median: np.ndarray, mad: np.ndarray,
                       eps: float = 1e-6) -> np.ndarray:
    m = axis.calendar_months()
    return (np.asarray(signal, dtype=np.float64) - median[m]) / (MAD_SCALE * mad[m] + eps)


def robust_zscore(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    med = np.median(x)
    return (x - med) / (MAD_SCALE * np.median(np.abs(x - med)) + eps)


def calibrate_and_zscore(signal: np.ndarray, axis: TimeAxis, median: np.ndarray, mad: np.ndarray,
                         eps: float = 1e-6) -> np.ndarray:
    """Calendar calibration against pooled training stats, then a site-local robust z-score."""
    return robust_zscore(calendar_calibrate(signal, axis, median, mad, eps), eps)


def sscd_ensemble(z_rec: np.ndarray, z_fore: np.ndarray, z_nov: np.ndarray,
                  weights=(0.6, 0.3, 0.4), site_id: str = "", tag: str = "sscd") -> ScoreSeries:
    z_rec, z_fore, z_nov = (np.asarray(z, dtype=np.float64) for z in (z_rec, z_fore, z_nov))
    if not z_rec.shape == z_fore.shape == z_nov.shape:
        raise DimensionMismatch("signal lengths differ")
    a_rec, a_fore, a_nov = weights
    raw = a_rec * z_rec + a_fore * z_fore + a_nov * z_nov
    return ScoreSeries(site_id, raw, minmax_probability(raw), tag)


def sscd_score(series: SiteSeries, bundle: SscdModelBundle) -> ScoreSeries:
    signals = sscd_signals(series, bundle)
    eps = bundle.config.epsilon
    z = [calibrate_and_zscore(s, series.axis, bundle.calib_median[j], bundle.calib_mad[j], eps)
         for j, s in enumerate(signals)]
    return sscd_ensemble(*z, weights=bundle.config.weights, site_id=series.site_id)


def with_weights(bundle: SscdModelBundle, weights) -> SscdModelBundle:
    """Copy of the bundle using different ensemble weights."""
    return replace(bundle, config=replace(bundle.config, weights=tuple(weights)))
