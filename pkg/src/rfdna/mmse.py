"""Convolution matrix of a TDL and the regularised (MMSE) inverse."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .waveform import ComplexSignal


def conv_matrix(h, n: int) -> np.ndarray:
    """(n + max delay) x n banded Toeplitz matrix A with A @ x == h * x.

    ``h`` is anything with ``coeffs`` and ``delays`` (a TapDelayLine or a
    ChannelEstimate).
    """
    if n < 1:
        raise ValueError("signal length must be >= 1")
    ir = np.zeros(int(h.delays[-1]) + 1, dtype=np.complex128)
    ir[np.asarray(h.delays)] = h.coeffs
    return linalg.convolution_matrix(ir, n, mode="full")


def mmse_equalize(r: ComplexSignal, A: np.ndarray, snr_linear: float) -> ComplexSignal:
    """x_hat = A^H (A A^H + I / snr)^-1 r, solved through a Cholesky factorisation."""
    if not snr_linear > 0:
        raise ValueError("snr_linear must be > 0")
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != len(r):
        raise ValueError(f"received length {len(r)} does not match matrix rows {A.shape}")
    G = A @ A.conj().T
    G[np.diag_indices_from(G)] += 1.0 / snr_linear
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"MMSE system is singular: {exc}") from exc
    z = linalg.cho_solve(factor, r.samples)
    return r.with_samples(A.conj().T @ z)
