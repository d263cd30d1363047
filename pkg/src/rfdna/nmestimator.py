"""Nelder-Mead simplex search and multipath coefficient estimation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numba
import numpy as np

from .waveform import ComplexSignal


class DegenerateSimplexError(ValueError):
    pass


class NonFiniteObjectiveError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NmOptions:
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    eps1: float = 1e-8
    eps2: float = 1e-8
    max_iters: int | None = None  # None -> 2000 * d

    def __post_init__(self):
        if not self.reflect > 0:
            raise ValueError("reflect must be > 0")
        if not self.expand > 1:
            raise ValueError("expand must be > 1")
        if not 0 < self.contract < 1:
            raise ValueError("contract must be in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must be in (0, 1)")
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("eps1 and eps2 must be > 0")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def iteration_cap(self, d: int) -> int:
        return self.max_iters if self.max_iters is not None else 2000 * d


class NmResult(NamedTuple):
    x: np.ndarray
    fun: float
    nit: int
    converged: bool


# Status codes returned by the loop.
_CONVERGED, _MAX_ITERS, _NONFINITE = 0, 1, 2


def _nm_loop(f, args, sim, rho, chi, gamma, sigma, eps1, eps2, max_iters):
    """Core iteration; written to compile under numba and run as plain Python.

    ``sim`` is (d+1, d). Returns (best_x, best_f, iterations, status).
    """
    d = sim.shape[1]
    sim = sim.copy()
    fs = np.empty(d + 1)
    for i in range(d + 1):
        fs[i] = f(sim[i], args)
        if not np.isfinite(fs[i]):
            return sim[i].copy(), fs[i], 0, _NONFINITE
    it = 0
    status = _MAX_ITERS
    while it < max_iters:
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        prev = sim.copy()
        cen = np.zeros(d)
        for i in range(d):
            cen += sim[i]
        cen /= d
        xr = cen + rho * (cen - sim[d])
        fr = f(xr, args)
        if not np.isfinite(fr):
            return xr, fr, it, _NONFINITE
        do_shrink = False
        if fr < fs[0]:
            xe = cen + chi * (xr - cen)
            fe = f(xe, args)
            if not np.isfinite(fe):
                return xe, fe, it, _NONFINITE
            if fe < fr:
                sim[d] = xe
                fs[d] = fe
            else:
                sim[d] = xr
                fs[d] = fr
        elif fr < fs[d - 1]:
            sim[d] = xr
            fs[d] = fr
        elif fr < fs[d]:
            xc = cen + gamma * (xr - cen)
            fc = f(xc, args)
            if not np.isfinite(fc):
                return xc, fc, it, _NONFINITE
            if fc <= fr:
                sim[d] = xc
                fs[d] = fc
            else:
                do_shrink = True
        else:
            xcc = cen - gamma * (cen - sim[d])
            fcc = f(xcc, args)
            if not np.isfinite(fcc):
                return xcc, fcc, it, _NONFINITE
            if fcc < fs[d]:
                sim[d] = xcc
                fs[d] = fcc
            else:
                do_shrink = True
        if do_shrink:
            for i in range(1, d + 1):
                sim[i] = sim[0] + sigma * (sim[i] - sim[0])
                fs[i] = f(sim[i], args)
                if not np.isfinite(fs[i]):
                    return sim[i].copy(), fs[i], it, _NONFINITE
        it += 1
        # Both tests run at the end of every iteration: spread of the vertex
        # values, and mean squared movement of the (slot-tracked) vertices.
        fbar = np.mean(fs)
        spread = np.sum((fs - fbar) ** 2) / d
        moved = np.sum((sim - prev) ** 2) / d
        if spread < eps1 and moved < eps2:
            status = _CONVERGED
            break
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], it, status


_nm_loop_jit = numba.njit(cache=True)(_nm_loop)


def _check_simplex(simplex) -> np.ndarray:
    sim = np.array(simplex, dtype=np.float64)
    if sim.ndim == 1:
        sim = sim[:, None]
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] + 1 or sim.shape[1] < 1:
        raise DegenerateSimplexError(f"simplex must have shape (d+1, d), got {sim.shape}")
    if not np.all(np.isfinite(sim)):
        raise DegenerateSimplexError("simplex contains non-finite coordinates")
    edges = sim[1:] - sim[0]
    if np.linalg.matrix_rank(edges) < sim.shape[1]:
        raise DegenerateSimplexError("simplex vertices are affinely dependent")
    return sim


def _call_plain(x, fn):
    return float(fn(x))


def nm_minimize(f: Callable, initial_simplex, opts: NmOptions = NmOptions(), args=None) -> NmResult:
    """Minimise ``f`` from ``initial_simplex`` (d+1 points in R^d).

    ``f`` is any Python callable ``f(x) -> float``. A numba-jitted objective of
    the form ``f(x, args)`` can be passed together with ``args`` to run the
    compiled loop instead.
    """
    sim = _check_simplex(initial_simplex)
    d = sim.shape[1]
    coeffs = (opts.reflect, opts.expand, opts.contract, opts.shrink, opts.eps1, opts.eps2,
              opts.iteration_cap(d))
    if isinstance(f, numba.core.registry.CPUDispatcher):
        x, fx, nit, status = _nm_loop_jit(f, args, sim, *coeffs)
    else:
        if args is not None:
            raise TypeError("args is only used with numba-jitted objectives")
        x, fx, nit, status = _nm_loop(_call_plain, f, sim, *coeffs)
    if status == _NONFINITE:
        raise NonFiniteObjectiveError(f"objective returned {fx} at {np.asarray(x)!r}")
    return NmResult(np.asarray(x), float(fx), int(nit), status == _CONVERGED)


def default_simplex(d: int, step: float = 0.1) -> np.ndarray:
    """Origin plus one ``step`` perturbation along each coordinate."""
    return np.vstack([np.zeros(d), step * np.eye(d)])


@numba.njit(cache=True)
def _lsq(theta, args):
    phi, y = args
    res = y - phi @ theta
    return res @ res


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    coeffs: np.ndarray
    delays: np.ndarray
    objective_value: float
    candidate_index: int = -1

    def impulse_response(self) -> np.ndarray:
        h = np.zeros(self.delays[-1] + 1, dtype=np.complex128)
        h[self.delays] = self.coeffs
        return h


def _delay_matrix(x: np.ndarray, n: int, L: int) -> np.ndarray:
    """(n, L) matrix whose column k is ``x`` delayed by k samples, cut to n rows."""
    X = np.zeros((n, L), dtype=np.complex128)
    for k in range(L):
        m = min(x.size, n - k)
        if m > 0:
            X[k:k + m, k] = x[:m]
    return X


def residual_power(r: ComplexSignal, candidate: ComplexSignal, coeffs) -> float:
    """Sum over the received window of |r - h * x|^2 for delays 0..L-1."""
    coeffs = np.asarray(coeffs)
    X = _delay_matrix(candidate.samples, len(r), coeffs.size)
    e = r.samples - X @ coeffs
    return float(np.real(np.vdot(e, e)))


def estimate_channel(r: ComplexSignal, candidate: ComplexSignal, L: int,
                     opts: NmOptions = NmOptions()) -> ChannelEstimate:
    """Fit L tap coefficients so the delayed candidate copies best match ``r``.

    The complex error is split into its real and imaginary parts, each part is
    minimised separately over the 2L interleaved (Re, Im) unknowns and the two
    coefficient vectors are averaged.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if len(candidate) > len(r):
        raise ValueError("candidate longer than received signal")
    X = _delay_matrix(candidate.samples, len(r), L)
    xr, xi = X.real, X.imag
    phi_re = np.empty((len(r), 2 * L))
    phi_re[:, 0::2] = xr
    phi_re[:, 1::2] = -xi
    phi_im = np.empty((len(r), 2 * L))
    phi_im[:, 0::2] = xi
    phi_im[:, 1::2] = xr
    sim = default_simplex(2 * L)
    est = []
    for phi, y in ((phi_re, np.ascontiguousarray(r.samples.real)),
                   (phi_im, np.ascontiguousarray(r.samples.imag))):
        res = nm_minimize(_lsq, sim, opts, args=(np.ascontiguousarray(phi), y))
        est.append(res.x[0::2] + 1j * res.x[1::2])
    coeffs = 0.5 * (est[0] + est[1])
    return ChannelEstimate(coeffs, np.arange(L), residual_power(r, candidate, coeffs))


def select_best(r: ComplexSignal, candidates: Sequence[ComplexSignal],
                estimates: Sequence[ChannelEstimate]) -> ChannelEstimate:
    """Pick the estimate with the least residual power; ties go to the lowest index."""
    if not candidates:
        raise ValueError("empty candidate list")
    if len(candidates) != len(estimates):
        raise ValueError("candidates and estimates differ in length")
    powers = [residual_power(r, x, e.coeffs) for x, e in zip(candidates, estimates)]
    c = int(np.argmin(powers))
    return replace(estimates[c], objective_value=powers[c], candidate_index=c)
