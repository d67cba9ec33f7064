"""Exact lattice computations for the single (non-branching) random walk.

These are the independent oracles for the single-walk asymptotics in
:mod:`brwpass.spectral`: n-fold convolution powers, strict tails, and the
first-passage law over a fixed barrier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from . import spectral
from .models import BranchingModel, LatticeApprox, discretize

DEFAULT_SUPPORT_CAP = 20_000_000


@dataclass(frozen=True)
class LatticePmf:
    """Sub-probability vector on ``offset + k*h``."""

    h: float
    offset: float
    weights: np.ndarray

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("lattice step must be > 0")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.weights.sum() > 1 + 1e-12:
            raise ValueError(f"total mass {self.weights.sum()} exceeds 1")

    @classmethod
    def from_approx(cls, approx: LatticeApprox) -> "LatticePmf":
        return cls(approx.h, approx.offset, np.asarray(approx.weights, dtype=float))

    @classmethod
    def from_atoms(cls, atoms, h: float) -> "LatticePmf":
        xs = np.array([x for x, _ in atoms], dtype=float)
        k = np.round((xs - xs.min()) / h).astype(np.int64)
        w = np.zeros(k.max() + 1)
        np.add.at(w, k, [p for _, p in atoms])
        return cls(h, float(xs.min()), w)

    @property
    def positions(self) -> np.ndarray:
        return self.offset + self.h * np.arange(len(self.weights))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.positions) / self.total)

    def index_above(self, x: float) -> int:
        """First index whose atom is strictly greater than ``x``."""
        q = (x - self.offset) / self.h
        k = round(q)
        if abs(q - k) <= 1e-9 * max(1.0, abs(q)):
            return int(k) + 1
        return math.floor(q) + 1


def _convolve(a: LatticePmf, b: LatticePmf, cap: int) -> LatticePmf:
    if abs(a.h - b.h) > 1e-12 * a.h:
        raise ValueError("lattice steps differ")
    size = len(a.weights) + len(b.weights) - 1
    if size > cap:
        raise MemoryError(f"convolution support {size} exceeds the cap {cap}")
    return LatticePmf(a.h, a.offset + b.offset, np.convolve(a.weights, b.weights))


def convolve_power(base: LatticePmf, n: int, cap: int = DEFAULT_SUPPORT_CAP) -> LatticePmf:
    """Exact law of ``X_1 + ... + X_n`` by repeated squaring (direct convolutions)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    result = None
    power = base
    while n:
        if n & 1:
            result = power if result is None else _convolve(result, power, cap)
        n >>= 1
        if n:
            power = _convolve(power, power, cap)
    return result


def tail(pmf: LatticePmf, x: float) -> float:
    """``P[S > x]``, strict."""
    k = pmf.index_above(x)
    if k <= 0:
        return pmf.total
    return float(pmf.weights[k:].sum())


def tilted_tail(base: LatticePmf, n: int, x: float, alpha: float, log: bool = False) -> float:
    """``P[S_n > x]`` computed under the exponential tilt ``exp(alpha s)``.

    The n-fold power of the tilted law is taken with FFT convolutions, where
    absolute rounding errors are harmless because the tilted mass near ``x``
    is of order one.  Undoing the tilt only multiplies atoms above ``x`` by
    ``exp(-alpha s) <= exp(-alpha x)``, so the tail keeps full relative
    precision even when it is far below the double range of the plain
    convolution.
    """
    pos = base.positions
    mask = base.weights > 0
    lw = np.full(len(pos), -np.inf)
    lw[mask] = alpha * pos[mask] + np.log(base.weights[mask])
    log_lam = logsumexp(lw)
    tilted = np.exp(lw - log_lam)
    res, res_off = None, 0.0
    power, p_off = tilted, base.offset
    k = n
    while k:
        if k & 1:
            if res is None:
                res, res_off = power, p_off
            else:
                res, res_off = np.clip(fftconvolve(res, power), 0, None), res_off + p_off
        k >>= 1
        if k:
            power, p_off = np.clip(fftconvolve(power, power), 0, None), 2 * p_off
    s = res_off + base.h * np.arange(len(res))
    start = LatticePmf(base.h, res_off, np.zeros(1)).index_above(x)
    start = max(start, 0)
    if start >= len(res):
        return -math.inf if log else 0.0
    val = n * log_lam + logsumexp(-alpha * s[start:], b=res[start:])
    return val if log else math.exp(val)


@dataclass(frozen=True)
class FirstPassageLawRw:
    u: float
    probabilities: np.ndarray  # probabilities[n - 1] = P[first passage over u at step n]
    surviving_mass: float

    def prob(self, n: int) -> float:
        return float(self.probabilities[n - 1]) if 1 <= n <= len(self.probabilities) else 0.0


def first_passage_barrier(base: LatticePmf, u: float, n_max: int,
                          cap: int = DEFAULT_SUPPORT_CAP) -> FirstPassageLawRw:
    """Law of the first ``n`` with ``S_n > u`` (strict), up to ``n_max``.

    The state is the sub-probability law of ``S_n`` on paths that never
    exceeded ``u``.  Each step convolves with ``base`` and moves all mass
    above ``u`` out of the vector.
    """
    if not u > 0:
        raise ValueError("u must be > 0")
    if abs(base.total - 1.0) > 1e-12:
        raise ValueError("base must be a probability vector")
    state = LatticePmf(base.h, 0.0, np.ones(1))
    probs = np.zeros(n_max)
    for n in range(n_max):
        state = _convolve(state, base, cap)
        k = max(state.index_above(u), 0)
        probs[n] = state.weights[k:].sum()
        w = state.weights[:k]
        if len(w) == 0:
            w = np.zeros(1)
        state = LatticePmf(state.h, state.offset, w)
    return FirstPassageLawRw(u, probs, state.total)


def passage_at_speed(base: LatticePmf, n: int, rho: float, a_n: float = 0.0) -> float:
    """``P[first passage over n*rho + a_n happens exactly at step n]``."""
    return first_passage_barrier(base, n * rho + a_n, n).prob(n)


def petrov_ratio_study(model: BranchingModel, rho: float, n_list, h: float,
                       truncation_mass: float = 1e-12):
    """Exact lattice tail ``P[S_n > n rho]`` against :func:`spectral.petrov_rhs`.

    The walk has the law of ``model`` discretized at step ``h``.  Returns
    rows ``(n, exact, predicted, ratio)``.
    """
    base = LatticePmf.from_approx(discretize(model.law, h, truncation_mass))
    alpha = spectral.tilt_for_speed(model, rho)
    rows = []
    for n in n_list:
        log_exact = tilted_tail(base, n, n * rho, alpha, log=True)
        log_pred = spectral.petrov_rhs(model, n, 0, 0.0, rho, log=True)
        rows.append((n, math.exp(log_exact), math.exp(log_pred), math.exp(log_exact - log_pred)))
    return rows
