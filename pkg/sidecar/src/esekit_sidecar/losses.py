"""Differentiable training objectives.

These mirror the engine's reference loss definitions exactly, so a loss
computed here on a batch matches the engine's number on the same inputs.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ConfigError

PROB_FLOOR = 1e-12


def masked_entity_loss(preds: torch.Tensor, targets: torch.Tensor, eta: float = 0.1) -> torch.Tensor:
    """Smoothed cross entropy over probability rows.

    With one-hot rows y and smoothing eta in [0, 1):

        -(1/N) * sum_i sum_j [ y_i[j]*(1-eta)*log(p_i[j])
                               + (1-y_i[j])*eta*log(1-p_i[j]) ]
    """
    if not 0.0 <= eta < 1.0:
        raise ConfigError(f"eta must be in [0, 1), got {eta}")
    if preds.ndim != 2 or preds.shape[0] != targets.shape[0]:
        raise ConfigError(f"batch shape mismatch: preds {tuple(preds.shape)}, targets {tuple(targets.shape)}")
    # float32 rounds 1 - 1e-12 up to 1.0, which turns the clamp into a
    # no-op and eta*log(1-p) into 0 * -inf; the formula needs float64
    p = preds.double().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    n = p.shape[0]
    y = torch.zeros_like(p)
    y[torch.arange(n), targets] = 1.0
    total = y * (1.0 - eta) * torch.log(p) + (1.0 - y) * eta * torch.log(1.0 - p)
    return -total.sum() / n


def infonce_loss(anchor: torch.Tensor, positive: torch.Tensor, negatives: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """-log softmax over cosine similarities scaled by tau, positive first.

    ``anchor``/``positive`` are [B, D], ``negatives`` is [B, K, D].
    Returns the batch mean.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if negatives.ndim != 3 or negatives.shape[1] < 1:
        raise ConfigError("InfoNCE needs at least one negative per anchor")
    anchor, positive, negatives = anchor.double(), positive.double(), negatives.double()
    pos = F.cosine_similarity(anchor, positive, dim=-1).unsqueeze(1)
    neg = F.cosine_similarity(anchor.unsqueeze(1), negatives, dim=-1)
    scaled = torch.cat([pos, neg], dim=1) / tau
    return -F.log_softmax(scaled, dim=1)[:, 0].mean()


def next_token_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Mean cross entropy over non-padding target positions."""
    flat = logits.reshape(-1, logits.shape[-1])
    return F.cross_entropy(flat, targets.reshape(-1), ignore_index=pad_id)
