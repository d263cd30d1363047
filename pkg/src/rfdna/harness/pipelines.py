"""The four identification pipelines run over a generated dataset."""

from __future__ import annotations

import logging
from pathlib import Path
from collections import Counter
from dataclasses import replace

import numpy as np

from ..cgan import (GridSearchResult, confidence_matrix, decide_confidence, equalize_all_labels,
                    grid_search_train_snr, train_cgan, train_classifier)
from ..jcaecnn import (JcaecnnModel, LossWeights, decompose, o_weights, path_copies, train_jcaecnn,
                       vote_classify)
from ..mmse import conv_matrix, mmse_equalize
from ..nmestimator import NmOptions, estimate_channel, select_best
from ..nncore import Graph, load_model, save_model
from ..waveform import ComplexSignal
from .config import component_seed
from .dataset import N_SAMPLES, Dataset
from .metrics import MetricsRecord

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


class ModelStore:
    """Trained networks by name, optionally mirrored to ``directory`` as model files.

    ``get`` returns a cached or saved model when one exists and trains it
    otherwise, so evaluation can reuse the output of a separate training run.
    """

    def __init__(self, directory=None):
        self.directory = None if directory is None else Path(directory)
        self.models: dict[str, Graph] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path | None:
        return None if self.directory is None else self.directory / f"{name}.rfnn"

    def get(self, name: str, train) -> Graph:
        if name in self.models:
            return self.models[name]
        p = self.path(name)
        if p is not None and p.exists():
            g = load_model(p)
        else:
            g = train()
            if p is not None:
                save_model(g, p)
        self.models[name] = g
        return g


def _cfg_seed(cfg, seed):
    return replace(cfg, seed=int(seed))


def _tag(snr: float) -> str:
    return f"{snr:g}dB".replace("-", "m").replace(".", "p")


def train_awgn_classifier(ds: Dataset, snrs=None) -> Graph:
    """CNN trained on the AWGN-only training copies (first noise draw) at ``snrs``."""
    snrs = ds.cfg.snr_grid_db if snrs is None else list(snrs)
    tr = ds.train_idx
    X = np.concatenate([ds.tensors(ds.awgn[s][0, tr]) for s in snrs])
    y = np.tile(ds.labels[tr], len(snrs))
    tc = _cfg_seed(ds.cfg.classifier, component_seed(ds.cfg.seed, "classifier"))
    return train_classifier(X, y, ds.cfg.n_emitters, tc)


def clean_accuracy(ds: Dataset, cnn: Graph) -> float:
    """Accuracy on the noise-free, channel-free test preambles."""
    te = ds.test_idx
    pred = np.argmax(cnn.predict(ds.tensors(ds.clean[te])[:, None]), axis=1)
    return float(np.mean(pred == ds.labels[te]))


def effective_snr(r: np.ndarray, snr_db: float, p_x: float) -> float:
    """Transmitted power over noise power, the noise being 1/(1+g) of the received power."""
    g = 10 ** (snr_db / 10)
    noise = np.mean(np.abs(r) ** 2) / (1 + g)
    return p_x / noise


def traditional_decision(ds: Dataset, cnn: Graph, r: ComplexSignal, snr: float, cand_idx,
                         counter: Counter, nm_opts: NmOptions = NmOptions()) -> int:
    """Estimate against every candidate, keep the best fit, MMSE-equalise, classify."""
    cands = [ComplexSignal(ds.awgn[snr][0, j]) for j in cand_idx]
    ests = []
    for x in cands:
        ests.append(estimate_channel(r, x, ds.cfg.L, nm_opts))
        counter["estimations"] += 1
    best = select_best(r, cands, ests)
    A = conv_matrix(best, N_SAMPLES)[:N_SAMPLES]
    gamma = effective_snr(r.samples, snr, cands[best.candidate_index].power())
    x_hat = mmse_equalize(r, A, gamma)
    probs = cnn.predict(ds.tensors(x_hat.samples)[None, None])
    counter["classifications"] += 1
    return int(np.argmax(probs[0]))


def run_traditional(ds: Dataset, store: ModelStore | None = None,
                    nm_opts: NmOptions = NmOptions()) -> list[MetricsRecord]:
    """Nelder-Mead channel estimate per candidate, best-fit selection, MMSE, AWGN-trained CNN.

    Candidates are drawn from the training split, ``n_candidates`` per emitter.
    """
    cfg = ds.cfg
    store = store or ModelStore()
    cnn = store.get("awgn_cnn", lambda: train_awgn_classifier(ds))
    rng = np.random.default_rng(component_seed(cfg.seed, "candidates"))
    by_emitter = [ds.train_idx[ds.labels[ds.train_idx] == e] for e in range(cfg.n_emitters)]
    records = []
    for snr in cfg.snr_grid_db:
        y_true, y_pred, ops = [], [], []
        for z in range(cfg.n_noise):
            for i in ds.test_idx:
                c = Counter()
                cand_idx = np.concatenate([rng.choice(b, cfg.n_candidates, replace=False) for b in by_emitter])
                r = ComplexSignal(ds.received[snr][z, i])
                try:
                    y_pred.append(traditional_decision(ds, cnn, r, snr, cand_idx, c, nm_opts))
                except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                    raise PipelineError(f"traditional pipeline failed on test preamble {i} "
                                        f"(snr {snr:g} dB, draw {z}): {exc}") from exc
                y_true.append(ds.labels[i])
                ops.append(c)
        records.append(MetricsRecord.from_predictions(snr, y_true, y_pred, cfg.n_emitters, ops))
        log.info("trad %g dB: %.4f", snr, records[-1].accuracy)
    return records


def cgan_sets(ds: Dataset, snr: float):
    """(multipath, clean) training sets at ``snr``, each a (tensors, labels) pair."""
    tr = ds.train_idx
    return ((ds.tensors(ds.received[snr][0, tr]), ds.labels[tr]),
            (ds.tensors(ds.awgn[snr][0, tr]), ds.labels[tr]))


def evaluate_cgan(ds: Dataset, G: Graph, cnn: Graph, snr: float) -> MetricsRecord:
    """Equalise every test draw under all labels and take the most confident label."""
    cfg = ds.cfg
    y_true, y_pred, ops = [], [], []
    for z in range(cfg.n_noise):
        R = ds.tensors(ds.received[snr][z, ds.test_idx])
        for i, r in zip(ds.test_idx, R):
            c = Counter()
            eq = equalize_all_labels(G, r[None], counter=c)[0]
            y_pred.append(decide_confidence(confidence_matrix(cnn, eq, counter=c)))
            y_true.append(ds.labels[i])
            ops.append(c)
    return MetricsRecord.from_predictions(snr, y_true, y_pred, cfg.n_emitters, ops)


def train_cgan_models(ds: Dataset, snr_r: float, store: ModelStore, curves_dir=None) -> tuple[Graph, Graph]:
    """Generator and fingerprint CNN for training SNR ``snr_r``."""
    def train_g():
        multipath, clean = cgan_sets(ds, snr_r)
        gcfg = replace(ds.cfg.cgan, seed=component_seed(ds.cfg.seed, "cgan") + int(round(snr_r * 1000)))
        paired = clean[0] if gcfg.recon_weight > 0 else None
        res = train_cgan(multipath, clean, gcfg, paired_clean=paired)
        if curves_dir is not None:
            res.write_curves(Path(curves_dir) / f"cgan_curves_{_tag(snr_r)}.csv")
        return res.G

    G = store.get(f"cgan_G_{_tag(snr_r)}", train_g)
    cnn = store.get(f"cgan_cnn_{_tag(snr_r)}", lambda: train_awgn_classifier(ds, [snr_r]))
    return G, cnn


def run_cgan(ds: Dataset, store: ModelStore | None = None,
             curves_dir=None) -> tuple[list[MetricsRecord], GridSearchResult]:
    """Grid-search the training SNR; each test SNR reports its best training SNR's metrics."""
    cfg = ds.cfg
    store = store or ModelStore()
    results: dict[float, dict[float, MetricsRecord]] = {}

    def builder(snr_r):
        G, cnn = train_cgan_models(ds, snr_r, store, curves_dir)
        results[snr_r] = {}

        def evaluate(snr_t):
            rec = evaluate_cgan(ds, G, cnn, snr_t)
            results[snr_r][snr_t] = rec
            log.info("cgan train %g dB / test %g dB: %.4f", snr_r, snr_t, rec.accuracy)
            return rec.accuracy

        return evaluate

    grid = grid_search_train_snr(cfg.train_snrs, cfg.snr_grid_db, builder)
    return [results[grid.best_train_for_test[s]][s] for s in cfg.snr_grid_db], grid


def train_cnn_d(ds: Dataset, snr: float) -> Graph:
    """CNN_D on AWGN-only path copies plus the AWGN-only preambles themselves."""
    tr = ds.train_idx
    aw = ds.awgn[snr][0, tr]
    copies = np.stack([path_copies(ComplexSignal(a), ds.tdl(i), N_SAMPLES) for a, i in zip(aw, tr)])
    X = np.concatenate([ds.tensors(aw), ds.tensors(copies).reshape(-1, 4, N_SAMPLES)])
    y = np.concatenate([ds.labels[tr], np.repeat(ds.labels[tr], ds.cfg.L)])
    tc = _cfg_seed(ds.cfg.cnn_d, component_seed(ds.cfg.seed, "cnn_d"))
    return train_classifier(X, y, ds.cfg.n_emitters, tc)


def train_jcaecnn_model(ds: Dataset, weights: LossWeights, snr: float | None = None) -> JcaecnnModel:
    snr = ds.cfg.jcaecnn_snr if snr is None else snr
    tr = ds.train_idx
    R = ds.tensors(ds.received[snr][0, tr])
    jc = _cfg_seed(ds.cfg.jcaecnn, component_seed(ds.cfg.seed, "jcaecnn"))
    return train_jcaecnn(R, ds.path_targets(tr), ds.labels[tr], weights, jc)


def evaluate_jcaecnn(ds: Dataset, model: JcaecnnModel, cnn_d: Graph, snr: float) -> MetricsRecord:
    cfg = ds.cfg
    y_true, y_pred, ops = [], [], []
    for z in range(cfg.n_noise):
        R = ds.tensors(ds.received[snr][z, ds.test_idx])
        for i, r in zip(ds.test_idx, R):
            c = Counter()
            recons, probs = decompose(model, r)
            y_pred.append(vote_classify(cnn_d, recons, int(np.argmax(probs)), counter=c))
            y_true.append(ds.labels[i])
            ops.append(c)
    return MetricsRecord.from_predictions(snr, y_true, y_pred, cfg.n_emitters, ops)


def run_jcaecnn(ds: Dataset, optimized: bool = False, store: ModelStore | None = None,
                curves_dir=None) -> list[MetricsRecord]:
    """Train at the fixed training SNR with unit (or halving, when ``optimized``) weights."""
    cfg = ds.cfg
    store = store or ModelStore()
    name = "o-jcaecnn" if optimized else "jcaecnn"
    w = o_weights(cfg.L) if optimized else LossWeights.uniform(cfg.L)

    graph = store.get(name, lambda: _train_graph(ds, w, name, curves_dir))
    model = JcaecnnModel(graph, LossWeights(tuple(graph.meta["lambda_k"]), graph.meta["lambda_c"]), cfg.jcaecnn)
    cnn_d = store.get("cnn_d", lambda: train_cnn_d(ds, cfg.jcaecnn_snr))
    records = []
    for snr in cfg.snr_grid_db:
        records.append(evaluate_jcaecnn(ds, model, cnn_d, snr))
        log.info("%s %g dB: %.4f", name, snr, records[-1].accuracy)
    return records


def train_models(ds: Dataset, store: ModelStore, curves_dir=None) -> None:
    """Train (or load) every network the configured pipelines need."""
    cfg = ds.cfg
    if "trad" in cfg.pipelines:
        store.get("awgn_cnn", lambda: train_awgn_classifier(ds))
    if "cgan" in cfg.pipelines:
        for s in cfg.train_snrs:
            train_cgan_models(ds, s, store, curves_dir)
    for name in ("jcaecnn", "o-jcaecnn"):
        if name in cfg.pipelines:
            w = o_weights(cfg.L) if name == "o-jcaecnn" else LossWeights.uniform(cfg.L)
            store.get(name, lambda w=w, name=name: _train_graph(ds, w, name, curves_dir))
            store.get("cnn_d", lambda: train_cnn_d(ds, cfg.jcaecnn_snr))


def _train_graph(ds, w, name, curves_dir):
    m = train_jcaecnn_model(ds, w)
    if curves_dir is not None:
        m.write_curves(Path(curves_dir) / f"{name}_curves.csv")
    return m.graph


def run_experiment(ds: Dataset, store: ModelStore | None = None, curves_dir=None) -> dict:
    """Every configured pipeline over the full SNR grid.

    Returns ``{"metrics": {pipeline: [MetricsRecord]}, "clean_accuracy": float | None,
    "grid": GridSearchResult | None}``.
    """
    cfg = ds.cfg
    store = store or ModelStore()
    out = {"metrics": {}, "clean_accuracy": None, "grid": None}
    out["clean_accuracy"] = clean_accuracy(ds, store.get("awgn_cnn", lambda: train_awgn_classifier(ds)))
    if "trad" in cfg.pipelines:
        out["metrics"]["trad"] = run_traditional(ds, store)
    if "cgan" in cfg.pipelines:
        out["metrics"]["cgan"], out["grid"] = run_cgan(ds, store, curves_dir)
    if "jcaecnn" in cfg.pipelines:
        out["metrics"]["jcaecnn"] = run_jcaecnn(ds, False, store, curves_dir)
    if "o-jcaecnn" in cfg.pipelines:
        out["metrics"]["o-jcaecnn"] = run_jcaecnn(ds, True, store, curves_dir)
    return out
