"""Rayleigh tap-delay-line channels and SNR-calibrated AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .waveform import ComplexSignal, PREAMBLE_RATE_HZ


@dataclass(frozen=True, eq=False)
class TapDelayLine:
    coeffs: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128).ravel()
        d = np.array(self.delays, dtype=np.int64).ravel()
        if c.size < 1 or c.size != d.size:
            raise ValueError("coeffs and delays must have the same non-zero length")
        if d[0] != 0 or np.any(np.diff(d) <= 0):
            raise ValueError("delays must start at 0 and be strictly increasing")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "delays", d)

    @property
    def L(self) -> int:
        return self.coeffs.size

    @classmethod
    def identity(cls) -> "TapDelayLine":
        return cls([1.0], [0])

    def impulse_response(self) -> np.ndarray:
        h = np.zeros(self.delays[-1] + 1, dtype=np.complex128)
        h[self.delays] = self.coeffs
        return h


@dataclass(frozen=True)
class ChannelConfig:
    L: int = 5
    t_rms_s: float = 2 / PREAMBLE_RATE_HZ
    t_sample_s: float = 1 / PREAMBLE_RATE_HZ
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not (self.t_rms_s > 0 and self.t_sample_s > 0):
            raise ValueError("t_rms_s and t_sample_s must be positive")


def tap_variance(k: int, t_sample_s: float, t_rms_s: float) -> float:
    """Per-component (real or imaginary) variance of tap ``k`` (1-based)."""
    if k < 1:
        raise ValueError("tap index k must be >= 1")
    if not (t_sample_s > 0 and t_rms_s > 0):
        raise ValueError("sampling period and RMS delay spread must be positive")
    a = t_sample_s / t_rms_s
    return 0.5 * (-math.expm1(-a)) * math.exp(-k * a)


def draw_tdl(cfg: ChannelConfig, rng: np.random.Generator) -> TapDelayLine:
    sigma = np.sqrt([tap_variance(k, cfg.t_sample_s, cfg.t_rms_s) for k in range(1, cfg.L + 1)])
    re = rng.standard_normal(cfg.L) * sigma
    im = rng.standard_normal(cfg.L) * sigma
    return TapDelayLine(re + 1j * im, np.arange(cfg.L))


def apply_channel(x: ComplexSignal, h: TapDelayLine) -> ComplexSignal:
    """Convolve with the TDL, keeping the full ``max(delay)`` tail."""
    return x.with_samples(np.convolve(x.samples, h.impulse_response()))


def add_awgn(x: ComplexSignal, snr_db: float, rng: np.random.Generator) -> ComplexSignal:
    """Add circular complex Gaussian noise at ``snr_db`` relative to the empirical power of ``x``.

    ``snr_db = inf`` returns ``x`` unchanged.
    """
    p = x.power()
    if p == 0:
        raise ValueError("cannot set an SNR on a zero-power signal")
    if math.isinf(snr_db) and snr_db > 0:
        return x
    noise_power = p / 10 ** (snr_db / 10)
    n = (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x))) * np.sqrt(noise_power / 2)
    return x.with_samples(x.samples + n)
