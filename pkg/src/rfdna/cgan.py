"""Conditional-GAN equaliser and the equalise-then-classify fingerprinting path."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .nncore import (Graph, GraphBuilder, TrainConfig, TrainingDivergedError, bce, cce_from_logits,
                     fit, loss_mse, snapshot)

log = logging.getLogger(__name__)

EMBED_DIM = 50
PLANE_SHAPE = (4, 320)


class UntrainedModelError(RuntimeError):
    pass


def _label_plane(b: GraphBuilder, label: str, n_classes: int, shape, prefix: str = "") -> str:
    e = b.add("embedding", label, name=f"{prefix}label_embed", num=n_classes, dim=EMBED_DIM)
    d = b.add("dense", e, name=f"{prefix}label_expand", units=int(np.prod(shape)))
    return b.add("reshape", d, name=f"{prefix}label_plane", shape=(1, *shape))


def build_generator(n_classes: int, shape=PLANE_SHAPE, seed: int = 0) -> Graph:
    """CAE mapping the labelled preamble (2, 4, 320) to (2, 4, 320)."""
    b = GraphBuilder()
    x = b.input("x", (1, *shape))
    y = b.input("label", (), "int")
    plane = _label_plane(b, y, n_classes, shape)
    h = b.add("concat", [x, plane], name="labeled")
    h = b.conv(h, 16, (3, 7), act="leaky_relu")
    h = b.add("maxpool2d", h, pool=(1, 2))
    h = b.conv(h, 32, (3, 5), act="leaky_relu", name="code")
    h = b.add("deconv2d", h, filters=16, kernel=(3, 5), stride=(1, 2))
    h = b.add("activation", h, fn="leaky_relu")
    h = b.add("deconv2d", h, filters=2, kernel=(3, 7))
    out = b.add("activation", h, name="out", fn="sigmoid")
    return b.build([out], seed)


def build_discriminator(n_classes: int, shape=PLANE_SHAPE, seed: int = 1) -> Graph:
    """CNN giving the probability that a (tensor, label) pair is real."""
    b = GraphBuilder()
    x = b.input("x", (1, *shape))
    y = b.input("label", (), "int")
    plane = _label_plane(b, y, n_classes, shape)
    h = b.add("concat", [x, plane], name="labeled")
    h = b.conv(h, 16, (3, 7), act="leaky_relu")
    h = b.add("maxpool2d", h, pool=(1, 2))
    h = b.conv(h, 32, (3, 5), act="leaky_relu")
    h = b.add("flatten", h)
    h = b.dense(h, 128, act="leaky_relu")
    h = b.add("dense", h, units=1)
    out = b.add("activation", h, name="prob", fn="sigmoid")
    return b.build([out], seed)


def build_classifier(n_classes: int, shape=PLANE_SHAPE, seed: int = 2) -> Graph:
    """Fingerprint CNN over a single normalised IQ+NL tensor."""
    b = GraphBuilder()
    x = b.input("x", (1, *shape))
    h = b.conv(x, 16, (3, 7))
    h = b.add("maxpool2d", h, pool=(1, 2))
    h = b.conv(h, 32, (3, 5))
    h = b.add("maxpool2d", h, pool=(1, 4))
    h = b.add("flatten", h)
    h = b.dense(h, 128)
    h = b.add("dense", h, units=n_classes)
    out = b.add("activation", h, name="probs", fn="softmax")
    return b.build([out], seed)


def toy_generator(n_classes: int, n: int = 8, seed: int = 0) -> Graph:
    """Dense conditional generator over length-``n`` vectors."""
    b = GraphBuilder()
    x = b.input("x", (n,))
    y = b.input("label", (), "int")
    e = b.add("embedding", y, name="label_embed", num=n_classes, dim=4)
    h = b.add("concat", [x, e], name="labeled")
    h = b.dense(h, 32, act="leaky_relu")
    out = b.dense(h, n, act="linear", name="out")
    return b.build([out], seed)


def toy_discriminator(n_classes: int, n: int = 8, seed: int = 1) -> Graph:
    b = GraphBuilder()
    x = b.input("x", (n,))
    y = b.input("label", (), "int")
    e = b.add("embedding", y, name="label_embed", num=n_classes, dim=4)
    h = b.add("concat", [x, e], name="labeled")
    h = b.dense(h, 32, act="leaky_relu")
    h = b.add("dense", h, units=1)
    out = b.add("activation", h, name="prob", fn="sigmoid")
    return b.build([out], seed)


def embed_label(graph: Graph, y: int) -> np.ndarray:
    """The (4, 320) label plane ``graph`` appends for class ``y``."""
    n = graph.layers["label_embed"].num_embeddings
    if not 0 <= int(y) < n:
        raise ValueError(f"label {y} outside [0, {n})")
    plane = graph.predict({"label": np.array([int(y)])}, outputs="label_plane")
    return plane[0, 0]


def labeled_preamble(G: Graph, r_tensor: np.ndarray, y: int) -> np.ndarray:
    """The (2, 4, 320) generator input formed from a normalised tensor and a label."""
    x = np.asarray(r_tensor, dtype=np.float32).reshape(1, 1, *G.input_specs["x"]["shape"][1:])
    return G.predict({"x": x, "label": np.array([int(y)])}, outputs="labeled")[0]


def _strip(out: torch.Tensor) -> torch.Tensor:
    # generator output channel 1 is the regenerated label plane
    return out[:, :1] if out.dim() == 4 else out


@dataclass
class CganConfig:
    epochs: int = 500
    batch_size: int = 256
    d_steps: int = 1
    g_lr: float = 2e-4
    d_lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    l2_lambda: float = 0.0
    patience: int = 50
    plateau_tol: float = 1e-3
    recon_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d_steps < 1:
            raise ValueError("d_steps (S) must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class CganResult:
    G: Graph
    D: Graph
    history: list[dict] = field(default_factory=list)

    def write_curves(self, path) -> None:
        cols = ["epoch", "d_loss", "g_loss", "d_out_real_mean", "d_out_fake_mean"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for h in self.history:
                w.writerow([h["epoch"]] + [f"{h[c]:.9g}" for c in cols[1:]])


def train_cgan(multipath_set, clean_set, cfg: CganConfig = CganConfig(),
               G: Graph | None = None, D: Graph | None = None, paired_clean=None) -> CganResult:
    """Adversarial training of G (multipath -> clean) against D.

    ``multipath_set`` and ``clean_set`` are ``(tensors, labels)`` pairs.
    Per minibatch: G forward, ``cfg.d_steps`` D updates on real/generated
    batches, then one G update on the non-saturating objective. Optional
    ``paired_clean`` (aligned with ``multipath_set``) enables an MSE term
    weighted by ``cfg.recon_weight``.
    """
    Xm, ym = multipath_set
    Xc, yc = clean_set
    if len(Xm) == 0 or len(Xc) == 0:
        raise ValueError("multipath and clean sets must be non-empty")
    n_classes = int(max(np.max(ym), np.max(yc))) + 1
    if G is None:
        G = build_generator(n_classes, seed=cfg.seed)
    if D is None:
        D = build_discriminator(n_classes, seed=cfg.seed + 1)
    dt = G.dtype
    want = tuple(G.input_specs["x"]["shape"])

    def as_x(a):
        t = torch.as_tensor(np.asarray(a), dtype=dt)
        return t.unsqueeze(1) if tuple(t.shape[1:]) != want and (1, *t.shape[1:]) == want else t

    Xm_t, Xc_t = as_x(Xm), as_x(Xc)
    ym_t, yc_t = torch.as_tensor(np.asarray(ym), dtype=torch.long), torch.as_tensor(np.asarray(yc), dtype=torch.long)
    pair_t = None
    if cfg.recon_weight > 0:
        if paired_clean is None:
            raise ValueError("recon_weight > 0 needs paired_clean")
        pair_t = as_x(paired_clean)

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.g_lr, betas=cfg.betas, weight_decay=cfg.l2_lambda)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.d_lr, betas=cfg.betas, weight_decay=cfg.l2_lambda)
    history: list[dict] = []
    good = (snapshot(G), snapshot(D))
    G.train()
    D.train()
    n = len(Xm_t)
    for epoch in range(cfg.epochs):
        sums = Counter()
        for idx in _batches(n, cfg.batch_size, rng):
            ix = torch.as_tensor(idx)
            r, y = Xm_t[ix], ym_t[ix]
            fake = _strip(G({"x": r, "label": y}))
            for _ in range(cfg.d_steps):
                c = torch.as_tensor(rng.integers(0, len(Xc_t), len(idx)))
                p_real = D({"x": Xc_t[c], "label": yc_t[c]})
                p_fake = D({"x": fake.detach(), "label": y})
                loss_d = bce(p_real, 1) + bce(p_fake, 0)
                opt_d.zero_grad(set_to_none=True)
                loss_d.backward()
                opt_d.step()
            p_gen = D({"x": fake, "label": y})
            loss_g = bce(p_gen, 1)
            if pair_t is not None:
                loss_g = loss_g + cfg.recon_weight * loss_mse(fake, pair_t[ix])
            opt_g.zero_grad(set_to_none=True)
            loss_g.backward()
            opt_g.step()
            if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
                G.load_state_dict(good[0])
                D.load_state_dict(good[1])
                raise TrainingDivergedError(
                    f"non-finite GAN loss at epoch {epoch}: d={float(loss_d)}, g={float(loss_g)}",
                    good, epoch)
            k = len(idx)
            with torch.no_grad():
                sums["d_loss"] += float(loss_d) * k
                sums["g_loss"] += float(loss_g) * k
                sums["real"] += float(p_real.mean()) * k
                sums["fake"] += float(p_fake.mean()) * k
                sums["value"] += float(torch.log(p_real.clamp_min(1e-12)).mean()
                                       + torch.log1p(-p_fake.clamp_max(1 - 1e-12)).mean()) * k
        good = (snapshot(G), snapshot(D))
        history.append({"epoch": epoch, "d_loss": sums["d_loss"] / n, "g_loss": sums["g_loss"] / n,
                        "d_out_real_mean": sums["real"] / n, "d_out_fake_mean": sums["fake"] / n,
                        "value": sums["value"] / n})
        if _plateaued([h["d_loss"] for h in history], cfg.patience, cfg.plateau_tol):
            log.info("CGAN early stop at epoch %d", epoch)
            break
    G.eval()
    D.eval()
    G.meta.update(trained=True, role="generator", n_classes=n_classes)
    D.meta.update(trained=True, role="discriminator", n_classes=n_classes)
    return CganResult(G, D, history)


def _batches(n, bs, rng):
    order = rng.permutation(n)
    for i in range(0, n, bs):
        yield order[i:i + bs]


def _plateaued(values: Sequence[float], patience: int, tol: float) -> bool:
    """True when the mean of the last ``patience`` values moved less than ``tol`` (relative)."""
    if patience <= 0 or len(values) < 2 * patience:
        return False
    last = float(np.mean(values[-patience:]))
    prev = float(np.mean(values[-2 * patience:-patience]))
    return abs(last - prev) <= tol * max(abs(prev), 1e-12)


def _require_trained(graph: Graph, what: str):
    if not graph.meta.get("trained", False):
        raise UntrainedModelError(f"{what} has not been trained")


def cgan_equalize(G: Graph, r_tensor: np.ndarray, y: int, counter: Counter | None = None) -> np.ndarray:
    """Equalise one normalised (4, 320) tensor under label ``y``; label channel removed."""
    return equalize_all_labels(G, np.asarray(r_tensor)[None], labels=[y], counter=counter)[0, 0]


def equalize_all_labels(G: Graph, R: np.ndarray, labels: Sequence[int] | None = None,
                        counter: Counter | None = None) -> np.ndarray:
    """Run G on every (preamble, label) pair. Returns (n, n_labels, 4, 320)."""
    _require_trained(G, "generator")
    n_classes = G.layers["label_embed"].num_embeddings
    labels = list(range(n_classes)) if labels is None else [int(v) for v in labels]
    for v in labels:
        if not 0 <= v < n_classes:
            raise ValueError(f"label {v} outside [0, {n_classes})")
    R = np.asarray(R, dtype=np.float32)
    n = len(R)
    x = np.repeat(R[:, None], len(labels), axis=1).reshape(n * len(labels), 1, *R.shape[1:])
    y = np.tile(np.array(labels), n)
    out = G.predict({"x": x, "label": y})
    if counter is not None:
        counter["equalizations"] += n * len(labels)
    return out[:, 0].reshape(n, len(labels), *R.shape[1:])


def decide_confidence(Q: np.ndarray) -> int:
    """Label (column) at the global maximum of Q; first (i, j) in row-major order on ties."""
    Q = np.asarray(Q)
    _, j = np.unravel_index(int(np.argmax(Q)), Q.shape)
    return int(j)


def confidence_matrix(cnn: Graph, equalized_set: np.ndarray, counter: Counter | None = None) -> np.ndarray:
    eq = np.asarray(equalized_set, dtype=np.float32)
    Q = cnn.predict(eq[:, None])
    if counter is not None:
        counter["classifications"] += len(eq)
    return Q


def classify_confidence(cnn: Graph, equalized_set: np.ndarray, counter: Counter | None = None) -> int:
    """Classify each label-conditioned equalisation and keep the most confident label."""
    return decide_confidence(confidence_matrix(cnn, equalized_set, counter))


def train_classifier(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: TrainConfig,
                     graph: Graph | None = None) -> Graph:
    """Fit the fingerprint CNN on (n, 4, 320) tensors with fused softmax/CCE."""
    if graph is None:
        graph = build_classifier(n_classes, shape=tuple(np.asarray(X).shape[1:]), seed=cfg.seed)
    X = np.asarray(X, dtype=np.float32)[:, None]
    history = fit(graph, X, np.asarray(y, dtype=np.int64), cce_from_logits, cfg, logits=True)
    graph.meta.update(trained=True, role="classifier", n_classes=n_classes, final_loss=history[-1])
    return graph


@dataclass
class GridSearchResult:
    train_snrs: list[float]
    test_snrs: list[float]
    accuracy: np.ndarray
    best_train_for_test: dict[float, float]
    best_overall: float


def grid_search_train_snr(train_snrs: Sequence[float], test_snrs: Sequence[float],
                          builder: Callable[[float], Callable[[float], float]]) -> GridSearchResult:
    """``builder(snr_r)`` trains at ``snr_r`` and returns ``evaluate(snr_t) -> accuracy``.

    The overall best training SNR maximises the mean accuracy over the test
    grid; ties keep the first entry of ``train_snrs``.
    """
    train_snrs, test_snrs = list(train_snrs), list(test_snrs)
    if not train_snrs or not test_snrs:
        raise ValueError("SNR grids must be non-empty")
    acc = np.zeros((len(train_snrs), len(test_snrs)))
    for i, s_r in enumerate(train_snrs):
        evaluate = builder(s_r)
        for j, s_t in enumerate(test_snrs):
            acc[i, j] = evaluate(s_t)
    best = {s_t: train_snrs[int(np.argmax(acc[:, j]))] for j, s_t in enumerate(test_snrs)}
    overall = train_snrs[int(np.argmax(acc.mean(axis=1)))]
    return GridSearchResult(train_snrs, test_snrs, acc, best, overall)
