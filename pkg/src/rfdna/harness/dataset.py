"""Synthetic fleet, per-preamble channels, noise augmentation and the train/test split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import TapDelayLine, add_awgn, apply_channel, draw_tdl
from ..jcaecnn import path_copies
from ..waveform import (ComplexSignal, EmitterProfile, MinMaxStats, apply_impairments, make_fleet,
                        minmax_normalize, synthesize_preamble, to_iqnl)
from .config import ExperimentConfig, component_seed

N_SAMPLES = 320


@dataclass
class Dataset:
    """Everything a pipeline needs; arrays are indexed by global preamble index.

    ``clean[i]`` is the impaired transmitted preamble, ``coeffs[i]`` its
    channel realisation, ``received[snr][z, i]`` the multipath+noise signal
    and ``awgn[snr][z, i]`` the AWGN-only copy, both cut to 320 samples.
    """

    cfg: ExperimentConfig
    fleet: list[EmitterProfile]
    labels: np.ndarray
    clean: np.ndarray
    coeffs: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    received: dict[float, np.ndarray] = field(repr=False)
    awgn: dict[float, np.ndarray] = field(repr=False)
    stats: MinMaxStats | None = None

    def tdl(self, i: int) -> TapDelayLine:
        return TapDelayLine(self.coeffs[i], np.arange(self.coeffs.shape[1]))

    def tensors(self, signals: np.ndarray) -> np.ndarray:
        """Normalised (…, 4, 320) float32 tensors of complex signals."""
        return minmax_normalize(to_iqnl(signals), self.stats).astype(np.float32)

    def path_targets(self, idx) -> np.ndarray:
        """(len(idx), L, 4, 320) normalised path-copy targets from the noiseless preambles."""
        copies = np.stack([path_copies(ComplexSignal(self.clean[i]), self.tdl(i), N_SAMPLES) for i in idx])
        return self.tensors(copies)


def _noise(x: np.ndarray, snr: float, seed: int, i: int, z: int) -> np.ndarray:
    rng = np.random.default_rng([seed, i, int(round(snr * 1000)) + 1_000_000, z])
    return add_awgn(ComplexSignal(x), snr, rng).samples


def generate_dataset(cfg: ExperimentConfig) -> Dataset:
    """Build the fleet, one channel per preamble, and every (SNR, noise draw) copy.

    The split is fixed per emitter before any noise is drawn; Min-Max
    statistics come from training preambles only.
    """
    fleet = make_fleet(cfg.n_emitters, component_seed(cfg.seed, "fleet"), cfg.impairment_spread)
    base = synthesize_preamble()
    emitted = [apply_impairments(base, p).samples for p in fleet]
    n_total = cfg.n_emitters * cfg.n_preambles
    labels = np.repeat(np.arange(cfg.n_emitters), cfg.n_preambles)
    clean = np.stack([emitted[y] for y in labels])

    ch_cfg = cfg.channel
    ch_seed = component_seed(cfg.seed, "channel")
    coeffs = np.stack([draw_tdl(ch_cfg, np.random.default_rng([ch_seed, i])).coeffs for i in range(n_total)])

    split_rng = np.random.default_rng(component_seed(cfg.seed, "split"))
    train, test = [], []
    for e in range(cfg.n_emitters):
        order = e * cfg.n_preambles + split_rng.permutation(cfg.n_preambles)
        train.append(np.sort(order[:cfg.n_train]))
        test.append(np.sort(order[cfg.n_train:]))
    train_idx, test_idx = np.concatenate(train), np.concatenate(test)

    noise_seed = component_seed(cfg.seed, "noise")
    received, awgn = {}, {}
    for snr in cfg.snr_grid_db:
        rx = np.empty((cfg.n_noise, n_total, N_SAMPLES), dtype=complex)
        aw = np.empty_like(rx)
        for i in range(n_total):
            h = TapDelayLine(coeffs[i], np.arange(cfg.L))
            mp = apply_channel(ComplexSignal(clean[i]), h).samples[:N_SAMPLES]
            for z in range(cfg.n_noise):
                rx[z, i] = _noise(mp, snr, noise_seed, i, 2 * z)
                aw[z, i] = _noise(clean[i], snr, noise_seed, i, 2 * z + 1)
        received[snr], awgn[snr] = rx, aw

    ds = Dataset(cfg, fleet, labels, clean, coeffs, train_idx, test_idx, received, awgn)
    ds.stats = MinMaxStats.fit(np.concatenate(
        [to_iqnl(received[s][:, train_idx]).reshape(-1, 4, N_SAMPLES) for s in cfg.snr_grid_db]
        + [to_iqnl(awgn[s][:, train_idx]).reshape(-1, 4, N_SAMPLES) for s in cfg.snr_grid_db]))
    return ds
