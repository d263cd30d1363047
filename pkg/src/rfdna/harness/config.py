"""Experiment configuration and master-seed fan-out."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..cgan import CganConfig
from ..channel import ChannelConfig
from ..jcaecnn import JcaecnnConfig
from ..nncore import TrainConfig

PIPELINES = ("trad", "cgan", "jcaecnn", "o-jcaecnn")

# component -> fixed offset mixed with the master seed
SEED_OFFSETS = {
    "fleet": 101,
    "channel": 202,
    "noise": 303,
    "split": 404,
    "candidates": 505,
    "classifier": 606,
    "cgan": 707,
    "jcaecnn": 808,
    "cnn_d": 909,
}


def component_seed(master: int, component: str) -> int:
    """Stable 63-bit seed for one component of a run."""
    ss = np.random.SeedSequence([int(master), SEED_OFFSETS[component]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class ExperimentConfig:
    n_emitters: int = 4
    impairment_spread: float = 1.0
    n_preambles: int = 200
    L: int = 5
    t_rms_s: float = 2 / 20e6
    t_sample_s: float = 1 / 20e6
    snr_grid_db: list[float] = field(default_factory=lambda: [9.0, 18.0, 30.0])
    n_noise: int = 3
    split: float = 0.9
    pipelines: list[str] = field(default_factory=lambda: list(PIPELINES))
    seed: int = 0
    n_candidates: int = 5
    cgan_train_snrs: list[float] | None = None
    jcaecnn_train_snr: float | None = None
    classifier: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, batch_size=64, lr=3e-3))
    cnn_d: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, batch_size=64, lr=3e-3))
    cgan: CganConfig = field(default_factory=lambda: CganConfig(epochs=8, batch_size=64, patience=0))
    jcaecnn: JcaecnnConfig = field(default_factory=lambda: JcaecnnConfig(epochs=8, batch_size=64))

    def __post_init__(self):
        if self.n_emitters < 2:
            raise ValueError("need at least two emitters")
        if self.n_preambles < 2:
            raise ValueError("need at least two preambles per emitter")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if not self.snr_grid_db:
            raise ValueError("snr_grid_db must be non-empty")
        if self.n_noise < 1 or self.n_candidates < 1:
            raise ValueError("n_noise and n_candidates must be >= 1")
        bad = [p for p in self.pipelines if p not in PIPELINES]
        if bad:
            raise ValueError(f"unknown pipeline(s) {bad}; choose from {PIPELINES}")
        self.snr_grid_db = [float(s) for s in self.snr_grid_db]
        n_train = self.n_train
        if n_train < 1 or n_train >= self.n_preambles:
            raise ValueError("split leaves an empty train or test set")
        if self.n_candidates > n_train:
            raise ValueError("more candidates than training preambles per emitter")

    @property
    def n_train(self) -> int:
        return int(round(self.split * self.n_preambles))

    @property
    def n_test(self) -> int:
        return self.n_preambles - self.n_train

    @property
    def channel(self) -> ChannelConfig:
        return ChannelConfig(L=self.L, t_rms_s=self.t_rms_s, t_sample_s=self.t_sample_s,
                             seed=component_seed(self.seed, "channel"))

    @property
    def train_snrs(self) -> list[float]:
        return list(self.cgan_train_snrs or self.snr_grid_db)

    @property
    def jcaecnn_snr(self) -> float:
        return min(self.snr_grid_db) if self.jcaecnn_train_snr is None else float(self.jcaecnn_train_snr)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("classifier", "cnn_d", "cgan", "jcaecnn"):
            d[k] = getattr(self, k).to_dict()
            d[k]["betas"] = list(d[k]["betas"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        for k, typ in (("classifier", TrainConfig), ("cnn_d", TrainConfig),
                       ("cgan", CganConfig), ("jcaecnn", JcaecnnConfig)):
            if k in d and isinstance(d[k], dict):
                sub = dict(d[k])
                if "betas" in sub:
                    sub["betas"] = tuple(sub["betas"])
                d[k] = typ(**sub)
        return cls(**d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def full_config(**overrides) -> ExperimentConfig:
    """Protocol-scale values: 2000 preambles per emitter, 9..30 dB in 3 dB steps, ten noise draws."""
    base = dict(n_preambles=2000, n_noise=10, snr_grid_db=[float(s) for s in range(9, 31, 3)],
                classifier=TrainConfig(epochs=100, batch_size=256),
                cnn_d=TrainConfig(epochs=100, batch_size=256),
                cgan=CganConfig(),
                jcaecnn=JcaecnnConfig(batch_size=256))
    base.update(overrides)
    return ExperimentConfig(**base)


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot in floats; accept 1e-3 as well
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) config file; ``full: true`` starts from the protocol-scale values."""
    text = Path(path).read_text()
    data = (json.loads(text) if str(path).endswith(".json") else yaml.load(text, Loader=_Loader)) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    if data.pop("full", False):
        base = full_config().to_dict()
        base.update(data)
        data = base
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
