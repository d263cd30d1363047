"""Central-difference verification of autograd gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .graph import Graph

KINK_RATIO = 1e-5
KINK_RETRIES = 2


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: str
    errors: dict[str, float] = field(default_factory=dict)
    kink_retries: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def gradient_check(graph: Graph, inputs, eps: float = 1e-5, per_tensor: int = 6,
                   n_directions: int = 3, seed: int = 0,
                   loss_fn: Callable | None = None) -> GradCheckReport:
    """Compare autograd gradients with central differences in float64.

    Each parameter tensor contributes up to ``per_tensor`` coordinates,
    sampled among entries whose gradient is not negligible relative to the
    tensor's largest; ``n_directions`` random directions over all parameters
    at once are also checked. The default scalar is a fixed random projection
    of every graph output; pass ``loss_fn(outputs) -> scalar`` to check a loss.
    """
    g = copy.deepcopy(graph).double().eval()
    if not isinstance(inputs, Mapping):
        inputs = {next(iter(g.input_specs)): inputs}
    tin = {k: g._to_tensor(k, v) for k, v in inputs.items()}
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)

    outs = g(tin, g.output_names)
    proj = [torch.randn(o.shape, generator=gen, dtype=torch.float64) / np.sqrt(o.numel()) for o in outs]

    def scalar():
        o = g(tin, g.output_names)
        if loss_fn is not None:
            return loss_fn(o if len(o) > 1 else o[0])
        return sum((a * w).sum() for a, w in zip(o, proj))

    params = [(n, p) for n, p in g.named_parameters()]
    for _, p in params:
        p.grad = None
    scalar().backward()
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for n, p in params}

    errors: dict[str, float] = {}
    n_checked = 0
    retries = 0

    def central(shift) -> float:
        # shift(h) offsets the probed parameters by h; a large second difference
        # relative to the first means the step straddles a relu/max kink, so
        # the step is shrunk before comparing
        nonlocal retries
        base = float(scalar())
        h = eps
        for attempt in range(KINK_RETRIES + 1):
            shift(h)
            up = float(scalar())
            shift(-2 * h)
            down = float(scalar())
            shift(h)
            first, second = up - down, up + down - 2 * base
            if abs(second) <= KINK_RATIO * abs(first) or attempt == KINK_RETRIES:
                return first / (2 * h)
            retries += 1
            h /= 10
        raise AssertionError("unreachable")

    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            gflat = grads[name].view(-1)
            gmax = float(gflat.abs().max())
            pool = np.flatnonzero(gflat.abs().numpy() >= 1e-3 * gmax) if gmax > 0 else np.arange(flat.numel())
            picks = rng.choice(pool, size=min(per_tensor, pool.size), replace=False)
            worst = 0.0
            for i in picks:
                def shift(h, i=i, flat=flat):
                    flat[i] += h
                fd = central(shift)
                ad = float(gflat[i])
                err = _rel(fd, ad) if gmax > 0 else abs(fd - ad)
                worst = max(worst, err)
                n_checked += 1
            errors[name] = worst

        for j in range(n_directions):
            vs = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for _, p in params]
            norm = torch.sqrt(sum((v ** 2).sum() for v in vs))
            vs = [v / norm for v in vs]
            ad = float(sum((grads[n] * v).sum() for (n, _), v in zip(params, vs)))

            def shift(h, vs=vs):
                for (_, p), v in zip(params, vs):
                    p.add_(h * v)
            errors[f"direction[{j}]"] = _rel(central(shift), ad)
            n_checked += 1

    worst_name = max(errors, key=errors.get) if errors else ""
    return GradCheckReport(errors.get(worst_name, 0.0), n_checked, worst_name, errors, retries)
