"""Central finite-difference gradient checks in float64."""

import torch

from watchcd.sscd import (
    SscdConfig,
    SscdNet,
    barlow_twins_loss,
    contrastive_loss,
    forecast_context,
    forecast_loss,
    random_mask,
    reconstruction_loss,
)
from watchcd.ws import WsNet, weighted_bce

H_STEP = 1e-6


def max_relative_error(params: list[torch.Tensor], closure) -> float:
    """Norm-wise relative error between autograd and central differences over all parameters."""
    for p in params:
        p.grad = None
    closure().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()
    numeric = torch.zeros_like(analytic)
    k = 0
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + H_STEP
                up = closure().item()
                flat[i] = orig - H_STEP
                down = closure().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * H_STEP)
                k += 1
    den = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / den


def sscd_instance(seed: int, d: int = 4, latent: int = 3, hidden: int = 5, B: int = 2, T: int = 5):
    torch.manual_seed(seed)
    net = SscdNet(d, latent, hidden).double()
    X = torch.randn(B, T, d, dtype=torch.float64)
    return net, X


def sscd_component_errors(seed: int) -> dict[str, float]:
    net, X = sscd_instance(seed)
    B, T, d = X.shape
    x = X.reshape(B * T, d)
    gen = torch.Generator().manual_seed(seed)
    cfg = SscdConfig()
    m1 = random_mask(B * T, d, cfg.mask_ratio, gen)
    m2 = random_mask(B * T, d, cfg.mask_ratio, gen)
    ctx = forecast_context(X, net.context)[:, 1:].reshape(-1, net.context * d)
    target = X[:, 1:].reshape(-1, d)
    idx = torch.arange(B * T).reshape(B, T)
    anchors, positives = idx[:, :-1].reshape(-1), idx[:, 1:].reshape(-1)
    enc = list(net.encoder.parameters())
    closures = {
        "rec": (enc + list(net.decoder.parameters()), lambda: reconstruction_loss(net, x, m1)),
        "fore": (list(net.forecaster.parameters()), lambda: forecast_loss(net, ctx, target)),
        "contrast": (enc, lambda: contrastive_loss(net.encoder(x), anchors, positives, cfg.temperature)),
        "bt": (enc, lambda: barlow_twins_loss(net.encoder(x * (~m1)), net.encoder(x * (~m2)), cfg.bt_offdiag)),
    }
    return {k: max_relative_error(p, f) for k, (p, f) in closures.items()}


def ws_bce_error(seed: int) -> float:
    torch.manual_seed(seed)
    net = WsNet(3, 4, 4, 1).double()
    x = torch.randn(2, 6, 3, dtype=torch.float64)
    y = torch.rand(2, 6, dtype=torch.float64)
    w = float(torch.rand(1).item() * 5 + 0.5)
    return max_relative_error(list(net.parameters()), lambda: weighted_bce(net(x), y, w))
