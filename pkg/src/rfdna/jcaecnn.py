"""Joint CAE+CNN: shared dense encoder, per-path decoder heads, internal classifier, voting."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .channel import TapDelayLine
from .nncore import Graph, GraphBuilder, TrainingDivergedError, loss_cce, loss_mse, snapshot
from .waveform import ComplexSignal, MinMaxStats, minmax_normalize, to_iqnl

log = logging.getLogger(__name__)

PREAMBLE_SAMPLES = 320


@dataclass(frozen=True)
class LossWeights:
    lambda_k: tuple[float, ...]
    lambda_c: float

    def __post_init__(self):
        object.__setattr__(self, "lambda_k", tuple(float(v) for v in self.lambda_k))
        if not self.lambda_k:
            raise ValueError("need at least one decoder weight")
        if any(v < 0 for v in self.lambda_k) or self.lambda_c < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def L(self) -> int:
        return len(self.lambda_k)

    @classmethod
    def uniform(cls, L: int) -> "LossWeights":
        return cls((1.0,) * L, 1.0)

    def scaled(self, s: float) -> "LossWeights":
        return LossWeights(tuple(s * v for v in self.lambda_k), s * self.lambda_c)


def o_weights(L: int) -> LossWeights:
    """Weights halving with path index: lambda_k = 2**(L-k+1), lambda_c = 2**L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return LossWeights(tuple(float(2 ** (L - k + 1)) for k in range(1, L + 1)), float(2 ** L))


@dataclass(frozen=True)
class PathTarget:
    k: int
    tensor: np.ndarray


def path_copies(x: ComplexSignal, h: TapDelayLine, n: int = PREAMBLE_SAMPLES) -> np.ndarray:
    """(L, n) complex array of alpha_k * x[m - tau_k], zero-filled and cut to ``n``."""
    xs = x.samples
    out = np.zeros((h.L, n), dtype=complex)
    for k, (a, d) in enumerate(zip(h.coeffs, h.delays)):
        m = max(0, min(n - d, len(xs)))
        out[k, d:d + m] = a * xs[:m]
    return out


def make_path_targets(x: ComplexSignal, h: TapDelayLine, stats: MinMaxStats | None = None,
                      n: int = PREAMBLE_SAMPLES) -> list[PathTarget]:
    """One 4 x n IQ+NL tensor per path; normalised when ``stats`` is given."""
    tensors = to_iqnl(path_copies(x, h, n))
    if stats is not None:
        tensors = minmax_normalize(tensors, stats)
    return [PathTarget(k + 1, t) for k, t in enumerate(tensors)]


def composite_loss(recons: Sequence[torch.Tensor], probs: torch.Tensor, targets: Sequence[torch.Tensor],
                   onehot: torch.Tensor, w: LossWeights, classifier_count: str = "per_path"):
    """Weighted sum of per-path MSEs and the classifier CCE.

    ``classifier_count='per_path'`` counts the CCE term once for every path,
    'once' counts it a single time. Returns ``(total, components)``.
    """
    if len(recons) != w.L or len(targets) != w.L:
        raise ValueError(f"expected {w.L} reconstructions and targets, got {len(recons)} and {len(targets)}")
    mses = [loss_mse(r, t) for r, t in zip(recons, targets)]
    cce = loss_cce(probs, onehot)
    mult = _class_multiplier(w.L, classifier_count)
    total = sum(lk * m for lk, m in zip(w.lambda_k, mses)) + mult * w.lambda_c * cce
    return total, {"mse": [float(m) for m in mses], "cce": float(cce)}


def _class_multiplier(L: int, classifier_count: str) -> int:
    if classifier_count == "per_path":
        return L
    if classifier_count == "once":
        return 1
    raise ValueError(f"unknown classifier_count {classifier_count!r}")


def build_jcaecnn(n_classes: int, L: int, growth: int = 12, code_channels: int = 32,
                  shape=(4, PREAMBLE_SAMPLES), seed: int = 0) -> Graph:
    """Shared encoder (two 3-layer dense blocks), L decoder heads and a classifier head.

    Node names: ``code`` is the shared representation, ``path_k`` (k = 1..L)
    the head outputs and ``probs`` the internal class probabilities.
    """
    b = GraphBuilder()
    h = b.input("x", (1, *shape))
    for blk in (1, 2):
        feats = [h]
        for i in range(3):
            src = feats[0] if len(feats) == 1 else b.add("concat", feats, name=f"enc{blk}_cat{i}")
            c = b.conv(src, growth, (3, 5), act="leaky_relu", name=f"enc{blk}_conv{i}")
            feats.append(c)
        h = b.add("concat", feats, name=f"enc{blk}_out")
        if blk == 1:
            h = b.add("maxpool2d", h, name="enc_pool", pool=(1, 2))
    b.add("conv2d", h, name="code_conv", filters=code_channels, kernel=(1, 1))
    code = b.add("activation", "code_conv", name="code", fn="leaky_relu")

    heads = []
    for k in range(1, L + 1):
        d = b.add("deconv2d", code, name=f"dec{k}_up", filters=16, kernel=(3, 5), stride=(1, 2))
        d = b.add("activation", d, name=f"dec{k}_act", fn="leaky_relu")
        d = b.add("deconv2d", d, name=f"dec{k}_out", filters=1, kernel=(3, 5))
        heads.append(b.add("activation", d, name=f"path_{k}", fn="sigmoid"))

    c = b.add("maxpool2d", code, name="cls_pool", pool=(1, 4))
    c = b.add("flatten", c, name="cls_flat")
    c = b.dense(c, 128, act="relu", name="cls_hidden")
    c = b.add("dense", c, name="cls_logits", units=n_classes)
    probs = b.add("activation", c, name="probs", fn="softmax")
    g = b.build(heads + [probs], seed)
    g.meta.update(L=L, n_classes=n_classes, heads=heads, classifier="probs", role="jcaecnn")
    return g


def head_parameters(graph: Graph, head: str) -> list[str]:
    """Names of parameters owned by a head: 'dec{k}' or 'cls'."""
    return [n for n, _ in graph.named_parameters() if n.split(".")[1].startswith(head + "_")]


@dataclass
class JcaecnnConfig:
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    l2_lambda: float = 0.0
    schedule: str = "alternating"
    classifier_count: str = "per_path"
    growth: int = 12
    code_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("alternating", "joint"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        _class_multiplier(1, self.classifier_count)
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class JcaecnnModel:
    graph: Graph
    weights: LossWeights
    cfg: JcaecnnConfig
    history: list[dict] = field(default_factory=list)

    @property
    def L(self) -> int:
        return self.weights.L

    @property
    def n_classes(self) -> int:
        return int(self.graph.meta["n_classes"])

    def write_curves(self, path) -> None:
        cols = ["epoch", "total"] + [f"mse_{k}" for k in range(1, self.L + 1)] + ["cce"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for h in self.history:
                w.writerow([h["epoch"]] + [f"{h[c]:.9g}" for c in cols[1:]])


def train_jcaecnn(R: np.ndarray, targets: np.ndarray, labels: np.ndarray, w: LossWeights,
                  cfg: JcaecnnConfig = JcaecnnConfig(), graph: Graph | None = None) -> JcaecnnModel:
    """Train on received tensors ``R`` (n, 4, 320), path targets (n, L, 4, 320) and labels.

    The alternating schedule takes, per minibatch, one optimiser step per
    decoder head on its weighted MSE and then one on the weighted classifier
    CCE; each step moves only that head and the shared encoder. Steps whose
    weight is zero are skipped. 'joint' takes a single step on the sum.
    """
    R = np.asarray(R, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if targets.ndim != 4 or targets.shape[1] != w.L or len(targets) != len(R) or len(labels) != len(R):
        raise ValueError(f"targets must be (n, {w.L}, 4, 320) aligned with R and labels; got {targets.shape}")
    n_classes = int(labels.max()) + 1 if graph is None else int(graph.meta["n_classes"])
    if graph is None:
        graph = build_jcaecnn(n_classes, w.L, cfg.growth, cfg.code_channels, R.shape[1:], cfg.seed)
    mult = _class_multiplier(w.L, cfg.classifier_count)
    heads = [f"path_{k}" for k in range(1, w.L + 1)]

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dt = graph.dtype
    Rt = torch.as_tensor(R, dtype=dt)[:, None]
    Tt = torch.as_tensor(targets, dtype=dt)[:, :, None]
    yt = torch.as_tensor(labels)
    opt = torch.optim.Adam(graph.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.l2_lambda)
    good = snapshot(graph)
    history: list[dict] = []
    n = len(Rt)
    graph.train()

    def step(loss, epoch):
        if not torch.isfinite(loss):
            graph.load_state_dict(good)
            raise TrainingDivergedError(f"non-finite JCAECNN loss at epoch {epoch}", good, epoch)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    for epoch in range(cfg.epochs):
        sums = np.zeros(w.L + 1)
        for idx in _batches(n, cfg.batch_size, rng):
            ix = torch.as_tensor(idx)
            x, y = {"x": Rt[ix]}, yt[ix]
            if cfg.schedule == "joint":
                outs = graph(x, heads + ["probs"], logits=True)
                mses = [loss_mse(outs[k], Tt[ix, k]) for k in range(w.L)]
                cce = F.cross_entropy(outs[-1], y)
                step(sum(lk * m for lk, m in zip(w.lambda_k, mses)) + mult * w.lambda_c * cce, epoch)
            else:
                mses = []
                for k, head in enumerate(heads):
                    m = loss_mse(graph(x, head), Tt[ix, k])
                    if w.lambda_k[k] > 0:
                        step(w.lambda_k[k] * m, epoch)
                    mses.append(m)
                cce = F.cross_entropy(graph(x, "probs", logits=True), y)
                if w.lambda_c > 0:
                    step(mult * w.lambda_c * cce, epoch)
            sums += np.array([float(m.detach()) for m in mses] + [float(cce.detach())]) * len(idx)
        means = sums / n
        total = float(np.dot(w.lambda_k, means[:-1]) + mult * w.lambda_c * means[-1])
        rec = {"epoch": epoch, "total": total, "cce": means[-1]}
        rec.update({f"mse_{k + 1}": means[k] for k in range(w.L)})
        history.append(rec)
        good = snapshot(graph)
        log.debug("jcaecnn epoch %d total %.6g", epoch, total)
    graph.eval()
    graph.meta.update(trained=True, lambda_k=list(w.lambda_k), lambda_c=w.lambda_c,
                      classifier_count=cfg.classifier_count)
    return JcaecnnModel(graph, w, cfg, history)


def _batches(n, bs, rng):
    order = rng.permutation(n)
    for i in range(0, n, bs):
        yield order[i:i + bs]


def decompose_batch(model: JcaecnnModel, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(n, L, 4, 320) reconstructions and (n, N_D) probabilities from one encoder pass."""
    R = np.asarray(R, dtype=np.float32)[:, None]
    heads = [f"path_{k}" for k in range(1, model.L + 1)]
    out = model.graph.predict({"x": R}, heads + ["probs"])
    recons = np.stack([o[:, 0] for o in out[:-1]], axis=1)
    return recons, out[-1]


def decompose(model: JcaecnnModel, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    recons, probs = decompose_batch(model, np.asarray(R)[None])
    return recons[0], probs[0]


def plurality(votes: Sequence[int]) -> int:
    """Most frequent label; ties go to the lowest label."""
    counts = Counter(int(v) for v in votes)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def vote_classify(cnn_d: Graph, reconstructions: np.ndarray, internal_label: int,
                  counter: Counter | None = None) -> int:
    """Plurality over CNN_D's label for each reconstruction plus the internal label."""
    recons = np.asarray(reconstructions, dtype=np.float32)
    if recons.ndim != 3 or len(recons) < 1:
        raise ValueError("need (L, 4, 320) reconstructions with L >= 1")
    labels = np.argmax(cnn_d.predict(recons[:, None]), axis=1)
    if counter is not None:
        counter["votes"] += len(labels) + 1
    return plurality(list(labels) + [int(internal_label)])
