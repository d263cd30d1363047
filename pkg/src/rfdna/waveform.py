"""802.11a preamble synthesis, emitter impairments, IQ+NL features and capture files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PREAMBLE_RATE_HZ = 20e6
PREAMBLE_LEN = 320
MAG_FLOOR = 1e-12

# Frequency-domain training sequences on subcarriers -26..26 (IEEE 802.11a-1999, 17.3.3).
_STS_TONES = np.sqrt(13 / 6) * np.array(
    [0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0,
     -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 0, 0, 0, 0, -1 - 1j, 0, 0, 0, -1 - 1j, 0,
     0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0]
)
_LTS_TONES = np.array(
    [1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1,
     1, 1, 1, 1, 0, 1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1,
     -1, 1, -1, 1, -1, 1, 1, 1, 1],
    dtype=complex,
)

CAPTURE_MAGIC = b"RFDNA1\0\0"
_CAPTURE_HEADER = struct.Struct("<8sIdI")


class CaptureFormatError(ValueError):
    """Raised when a capture file cannot be decoded."""


@dataclass(frozen=True, eq=False)
class ComplexSignal:
    """Complex baseband samples with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: float = PREAMBLE_RATE_HZ

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128).ravel()
        if s.size == 0:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("signal contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "ComplexSignal":
        return ComplexSignal(samples, self.sample_rate_hz)


def _tones_to_symbol(tones: np.ndarray) -> np.ndarray:
    bins = np.zeros(64, dtype=complex)
    # subcarrier k -> FFT bin k mod 64
    for k, v in zip(range(-26, 27), tones):
        bins[k % 64] = v
    return np.fft.ifft(bins) * 64 / np.sqrt(52)


def synthesize_preamble(sample_rate_hz: float = PREAMBLE_RATE_HZ) -> ComplexSignal:
    """Ten short symbols, the long-symbol guard interval and two long symbols.

    The result has unit average power; at 20 MHz it is exactly 320 samples.
    """
    if sample_rate_hz != PREAMBLE_RATE_HZ:
        raise ValueError(f"unsupported sample rate {sample_rate_hz!r}; only 20 MHz is supported")
    sts = _tones_to_symbol(_STS_TONES)
    lts = _tones_to_symbol(_LTS_TONES)
    short = np.tile(sts, 3)[:160]
    long_ = np.concatenate([lts[-32:], lts, lts])
    x = np.concatenate([short, long_])
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))
    return ComplexSignal(x, sample_rate_hz)


@dataclass(frozen=True)
class EmitterProfile:
    emitter_id: int
    iq_gain_imbalance: float = 1.0
    iq_phase_imbalance_rad: float = 0.0
    dc_offset: complex = 0j
    residual_cfo_hz: float = 0.0
    pa_cubic_coeff: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.iq_gain_imbalance < 2:
            raise ValueError("iq_gain_imbalance must lie in (0, 2)")
        if not abs(self.pa_cubic_coeff) < 1:
            raise ValueError("|pa_cubic_coeff| must be < 1")

    @classmethod
    def draw(cls, emitter_id: int, seed: int, spread: float = 1.0) -> "EmitterProfile":
        """Draw impairments for one emitter from its own seed.

        ``spread`` scales every range about its neutral value (1.0 gives the
        default fleet ranges).
        """
        if not 0 < spread <= 10:
            raise ValueError("spread must lie in (0, 10]")
        rng = np.random.default_rng(seed)
        gain = 1 + spread * rng.uniform(-0.05, 0.05)
        phase = np.deg2rad(spread * rng.uniform(-3.0, 3.0))
        dc = spread * rng.uniform(0, 0.02) * np.exp(2j * np.pi * rng.uniform())
        cfo = spread * rng.uniform(-300.0, 300.0)
        cubic = spread * rng.uniform(-0.05, 0.0)
        return cls(emitter_id, float(gain), float(phase), complex(dc), float(cfo), float(cubic), int(seed))


def make_fleet(n_emitters: int, seed: int, spread: float = 1.0) -> list[EmitterProfile]:
    seeds = np.random.SeedSequence(seed).generate_state(n_emitters, dtype=np.uint64)
    return [EmitterProfile.draw(i, int(s), spread) for i, s in enumerate(seeds)]


def apply_impairments(x: ComplexSignal, p: EmitterProfile) -> ComplexSignal:
    """IQ imbalance, cubic PA, DC offset and residual CFO, in that order."""
    s = x.samples
    i, q = s.real, s.imag
    q = p.iq_gain_imbalance * (np.cos(p.iq_phase_imbalance_rad) * q + np.sin(p.iq_phase_imbalance_rad) * i)
    y = i + 1j * q
    y = y + p.pa_cubic_coeff * y * (np.abs(y) ** 2)
    y = y + p.dc_offset
    n = np.arange(y.size)
    y = y * np.exp(2j * np.pi * p.residual_cfo_hz * n / x.sample_rate_hz)
    return x.with_samples(y)


def to_iqnl(r) -> np.ndarray:
    """Stack I, Q, ln|r| and angle(r) as rows.

    Accepts a ComplexSignal or a complex array of shape (..., N) and returns
    float64 of shape (..., 4, N). Magnitudes are floored at ``MAG_FLOOR``.
    """
    s = r.samples if isinstance(r, ComplexSignal) else np.asarray(r, dtype=np.complex128)
    mag = np.maximum(np.abs(s), MAG_FLOOR)
    phase = np.arctan2(s.imag, s.real)
    # atan2 returns -pi for (-0.0 imaginary, negative real); fold onto +pi
    phase = np.where(phase == -np.pi, np.pi, phase)
    return np.stack([s.real, s.imag, np.log(mag), phase], axis=-2)


def from_iqnl(t: np.ndarray) -> np.ndarray:
    """Rebuild complex samples from the ln-magnitude and phase rows."""
    t = np.asarray(t)
    return np.exp(t[..., 2, :]) * np.exp(1j * t[..., 3, :])


@dataclass(frozen=True)
class MinMaxStats:
    """Per-row minimum and maximum of IQ+NL tensors."""

    lo: np.ndarray
    hi: np.ndarray = field(repr=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).ravel()
        hi = np.asarray(self.hi, dtype=np.float64).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same length")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def fit(cls, tensors: np.ndarray) -> "MinMaxStats":
        t = np.asarray(tensors)
        rows = np.moveaxis(t, -2, 0).reshape(t.shape[-2], -1)
        return cls(rows.min(axis=1), rows.max(axis=1))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxStats":
        return cls(d["lo"], d["hi"])


def minmax_normalize(t: np.ndarray, stats: MinMaxStats) -> np.ndarray:
    """Map each row affinely into [0, 1] with ``stats``; out-of-range values are clipped."""
    t = np.asarray(t, dtype=np.float64)
    span = stats.hi - stats.lo
    bad = np.flatnonzero(~(span > 0))
    if bad.size:
        raise ValueError(f"degenerate min/max statistics for row {int(bad[0])}")
    lo = stats.lo[:, None]
    out = (t - lo) / span[:, None]
    return np.clip(out, 0.0, 1.0)


def minmax_denormalize(t: np.ndarray, stats: MinMaxStats) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return t * (stats.hi - stats.lo)[:, None] + stats.lo[:, None]


def write_capture(path, signal: ComplexSignal, metadata: dict | None = None) -> None:
    """Write ``signal`` as a little-endian RFDNA1 capture file."""
    label = int((metadata or {}).get("emitter_id", 0))
    payload = np.empty(2 * len(signal), dtype="<f4")
    payload[0::2] = signal.samples.real
    payload[1::2] = signal.samples.imag
    header = _CAPTURE_HEADER.pack(CAPTURE_MAGIC, len(signal), signal.sample_rate_hz, label)
    Path(path).write_bytes(header + payload.tobytes())


def read_capture(path) -> tuple[ComplexSignal, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CAPTURE_HEADER.size:
        raise CaptureFormatError("malformed header: file shorter than header")
    magic, count, rate, label = _CAPTURE_HEADER.unpack_from(raw)
    if magic != CAPTURE_MAGIC:
        raise CaptureFormatError(f"malformed header: bad magic {magic!r}")
    if not (np.isfinite(rate) and rate > 0):
        raise CaptureFormatError(f"malformed header: invalid sample rate {rate!r}")
    payload = raw[_CAPTURE_HEADER.size:]
    if len(payload) == 0 or len(payload) % 8 or len(payload) < 8 * count:
        raise CaptureFormatError(
            f"truncated payload: {len(payload)} bytes for {count} samples"
        )
    if len(payload) != 8 * count:
        raise CaptureFormatError(
            f"length mismatch: header declares {count} samples, payload holds {len(payload) // 8}"
        )
    iq = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    sig = ComplexSignal(iq[0::2] + 1j * iq[1::2], rate)
    return sig, {"emitter_id": int(label), "sample_rate_hz": float(rate), "n_samples": int(count)}
