"""Training configuration, optimisers and a minibatch loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .graph import Graph

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """Loss became NaN/Inf. ``checkpoint`` holds the last finite parameters."""

    def __init__(self, msg, checkpoint=None, epoch=None):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.epoch = epoch


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    l2_lambda: float = 0.0
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**d)


def make_optimizer(params, cfg: TrainConfig, lr: float | None = None) -> torch.optim.Optimizer:
    """SGD or Adam; ``l2_lambda`` is added to every gradient as weight decay."""
    lr = cfg.lr if lr is None else lr
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=lr, weight_decay=cfg.l2_lambda)
    return torch.optim.Adam(params, lr=lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.l2_lambda)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def snapshot(graph: Graph) -> dict:
    return {k: v.detach().clone() for k, v in graph.state_dict().items()}


def fit(graph: Graph, inputs, targets, loss_fn: Callable, cfg: TrainConfig,
        logits: bool = False, on_epoch: Callable | None = None) -> list[float]:
    """Minibatch training of ``graph`` on ``loss_fn(output, target)``.

    ``inputs`` is an array or a name->array mapping. Returns the per-epoch
    mean loss. All shuffling and dropout randomness derives from ``cfg.seed``.
    """
    if not isinstance(inputs, Mapping):
        inputs = {next(iter(graph.input_specs)): inputs}
    tin = {k: graph._to_tensor(k, v) for k, v in inputs.items()}
    ttarget = targets if isinstance(targets, torch.Tensor) else torch.as_tensor(np.asarray(targets))
    if ttarget.is_floating_point():
        ttarget = ttarget.to(graph.dtype)
    n = len(ttarget)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt = make_optimizer(graph.parameters(), cfg)
    history = []
    good = snapshot(graph)
    graph.train()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in minibatches(n, cfg.batch_size, rng):
            ix = torch.as_tensor(idx)
            opt.zero_grad(set_to_none=True)
            out = graph({k: v[ix] for k, v in tin.items()}, logits=logits)
            loss = loss_fn(out, ttarget[ix])
            if not torch.isfinite(loss):
                graph.load_state_dict(good)
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", good, epoch)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        history.append(total / n)
        good = snapshot(graph)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    graph.eval()
    return history
