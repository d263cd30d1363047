"""Loss functions. All take and return torch tensors (0-d for the loss)."""

from __future__ import annotations

import torch
import torch.nn.functional as F

PROB_FLOOR = 1e-12


def _same_shape(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean of squared elementwise differences."""
    _same_shape(pred, target, "loss_mse")
    return torch.mean((pred - target) ** 2)


def loss_cce(pred: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    """Batch-mean categorical cross entropy of probability rows against one-hot rows."""
    _same_shape(pred, onehot, "loss_cce")
    ok = ((onehot == 0) | (onehot == 1)).all() and torch.all(onehot.sum(dim=-1) == 1)
    if not ok:
        raise ValueError("onehot rows must contain a single 1 and zeros elsewhere")
    logp = torch.log(torch.clamp(pred, min=PROB_FLOOR))
    return -(onehot * logp).sum(dim=-1).mean()


def cce_from_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Softmax and cross entropy fused (log-sum-exp), integer labels."""
    return F.cross_entropy(logits, labels)


def bce(prob: torch.Tensor, target: float) -> torch.Tensor:
    """Binary cross entropy against a constant target, probabilities floored."""
    p = torch.clamp(prob, PROB_FLOOR, 1 - PROB_FLOOR)
    if target == 1:
        return -torch.log(p).mean()
    if target == 0:
        return -torch.log1p(-p).mean()
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


def onehot(labels, n_classes: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    return F.one_hot(labels, n_classes).to(torch.get_default_dtype())
