"""Grid dynamic programming for the running maximum of the branching random walk.

With ``R_n(v) = P[max over generations 1..n of S_gamma <= v]`` the i.i.d.
subtree decomposition gives

    R_n(v) = ( E[ Q_{n-1}(v - X) ] )^N,   Q_m(w) = R_m(w) 1{w >= 0},   R_0 = 1.

The state is stored as the complement ``F_n = 1 - R_n``, the probability that
level ``v`` has been exceeded.  All updates then become sums of nonnegative
terms, so probabilities far below 1e-16 keep full relative precision:

    g(v) = P[X > v] + sum_x P[X = x] F_{n-1}(v - x) 1{v - x >= 0}
    F_n(v) = 1 - (1 - g(v))^N.

Levels live on ``offset + k*h`` for ``k = 0..K-1``; levels above the top of
the grid are treated as never exceeded, which costs at most
``exp(-alpha0 * top)`` per level.  Every first-passage law of ``tau_u`` for
``u`` on the grid follows from ``P[tau_u = n] = F_n(u) - F_{n-1}(u)``.

For laws discretized from a continuous one, :func:`passage_laws` mixes the
laws at two neighbouring grid levels (:func:`level_mix`), which removes the
first-order lattice error in ``h``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import GridMisalignment, NonConvergence, RegimeError
from .models import BranchingModel, LatticeApprox, discretize
from .spectral import SpectralProfile

DEFAULT_B = 5.0
MIN_ITER_CAP = 1000


@dataclass(frozen=True)
class BarrierCdf:
    """Snapshot of ``R_n`` on the level grid, stored through its complement."""

    h: float
    offset: float
    exceed: np.ndarray
    generation: int = 0
    top_error: float = 0.0

    @classmethod
    def initial(cls, h: float, offset: float, n_levels: int, top_error: float = 0.0):
        return cls(h, offset, np.zeros(n_levels), 0, top_error)

    @property
    def values(self) -> np.ndarray:
        return 1.0 - self.exceed

    @property
    def levels(self) -> np.ndarray:
        return self.offset + self.h * np.arange(len(self.exceed))

    def index(self, level: float) -> int:
        q = (level - self.offset) / self.h
        k = round(q)
        if abs(q - k) > 1e-7 or not 0 <= k < len(self.exceed):
            raise GridMisalignment(f"level {level} is not on the grid")
        return int(k)

    def at(self, level: float) -> float:
        return float(1.0 - self.exceed[self.index(level)])


def _atom_shift(lattice: LatticeApprox, h: float) -> int:
    if abs(lattice.h - h) > 1e-12 * h:
        raise GridMisalignment(f"law step {lattice.h} differs from grid step {h}")
    q = lattice.offset / h
    o = round(q)
    if abs(q - o) > 1e-9 * max(1.0, abs(q)):
        raise GridMisalignment(
            f"law atoms start at {lattice.offset}, not a multiple of the grid step {h}")
    return int(o)


def barrier_step(prev: BarrierCdf, lattice: LatticeApprox, N: int) -> BarrierCdf:
    """One generation of the recursion, exact for laws on the grid."""
    o = _atom_shift(lattice, prev.h)
    p = np.asarray(lattice.weights, dtype=float)
    F = prev.exceed
    K = len(F)
    lo = -o - (len(p) - 1)
    hi = K - 1 - o
    m = np.arange(lo, hi + 1)
    G = np.zeros(len(m))
    G[m < 0] = 1.0
    inside = (m >= 0) & (m < K)
    G[inside] = F[m[inside]]
    g = np.clip(np.convolve(G, p, mode="valid"), 0.0, 1.0)
    with np.errstate(divide="ignore"):  # g = 1 gives log1p(-1) = -inf, i.e. F = 1
        new = -np.expm1(N * np.log1p(-g))
    return BarrierCdf(prev.h, prev.offset, new, prev.generation + 1, prev.top_error)


def horizon_window(profile: SpectralProfile, u: float, b: float = DEFAULT_B) -> tuple[int, int]:
    """Generations ``n_u -/+ b sqrt(n_u log n_u)`` around ``n_u = u / rho0``."""
    n_u = u / profile.rho0
    if n_u < 3:
        raise ValueError(f"u/rho0 = {n_u:.3g} < 3: window not meaningful")
    if b == 0:
        r = round(n_u)
        return r, r
    w = b * math.sqrt(n_u * math.log(n_u))
    return max(1, math.floor(n_u - w)), max(1, math.ceil(n_u + w))


def default_horizon(profile: SpectralProfile | None, u: float, b: float = DEFAULT_B) -> int:
    if profile is None:
        return 50
    return horizon_window(profile, max(u, 3 * profile.rho0), b)[1]


@dataclass(frozen=True)
class PassageLaw:
    """``P[tau_u = n]`` for ``n = 1..n_max`` plus the mass not resolved by the horizon."""

    u: float
    h: float
    probabilities: np.ndarray  # probabilities[n - 1] = P[tau_u = n]
    censored: float
    survival: float  # P[tau_u < inf]
    iterations: int
    rho0: float | None = None
    conditional: bool = False

    @property
    def n_max(self) -> int:
        return len(self.probabilities)

    @property
    def survival_complement(self) -> float:
        return 1.0 - self.survival

    @property
    def n_u(self) -> float | None:
        return None if self.rho0 is None else self.u / self.rho0

    @property
    def ns(self) -> np.ndarray:
        return np.arange(1, self.n_max + 1)

    def prob(self, n: int) -> float:
        return float(self.probabilities[n - 1]) if 1 <= n <= self.n_max else 0.0

    def cdf(self, n: int) -> float:
        """``P[tau_u <= n]`` (n within the horizon)."""
        return float(self.probabilities[:max(0, min(n, self.n_max))].sum())

    @property
    def total(self) -> float:
        """Mass accounted for; 1 for an unconditional law."""
        if self.conditional:
            return float(self.probabilities.sum() + self.censored)
        return float(self.probabilities.sum() + self.censored + (1.0 - self.survival))

    @property
    def mean(self) -> float:
        w = self.probabilities / self.probabilities.sum()
        return float(np.dot(w, self.ns))

    @property
    def variance(self) -> float:
        w = self.probabilities / self.probabilities.sum()
        m = float(np.dot(w, self.ns))
        return float(np.dot(w, (self.ns - m) ** 2))

    def standardized(self, center: float, scale: float) -> np.ndarray:
        return (self.ns - center) / scale

    def header(self) -> dict:
        return {"u": self.u, "h": self.h, "n_max": self.n_max, "survival": self.survival,
                "censored": self.censored, "conditional": self.conditional}

    def to_csv(self, fh=None) -> str | None:
        """Write ``# {json header}`` then ``n,prob`` rows."""
        out = io.StringIO() if fh is None else fh
        out.write("# " + json.dumps(self.header()) + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "prob"])
        for n, p in zip(self.ns, self.probabilities):
            w.writerow([int(n), repr(float(p))])
        return out.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, text: str) -> "PassageLaw":
        lines = text.splitlines()
        head = json.loads(lines[0][2:])
        rows = list(csv.DictReader(lines[1:]))
        probs = np.array([float(r["prob"]) for r in rows])
        return cls(head["u"], head["h"], probs, head["censored"], head["survival"], 0,
                   conditional=head.get("conditional", False))


def _profile_or_none(model):
    try:
        return spectral.solve_alpha0(model)
    except RegimeError:
        return None


def _residue(u: float, h: float) -> float:
    r = u - math.floor(u / h) * h
    return 0.0 if r < 1e-9 * h or h - r < 1e-9 * h else r


class BarrierDP:
    """Evolves the barrier recursion on one level grid covering several ``u`` values.

    All ``u`` must be congruent modulo ``h``; use :func:`passage_laws` to
    group arbitrary lists.
    """

    def __init__(self, model: BranchingModel, u_list, h: float, margin: float | None = None,
                 truncation_mass: float = 1e-12, lattice: LatticeApprox | None = None):
        self.model = model
        self.u_list = [float(u) for u in u_list]
        if any(not u > 0 for u in self.u_list):
            raise ValueError("barrier levels u must be > 0")
        self.h = float(h)
        self.lattice = lattice if lattice is not None else discretize(model.law, h, truncation_mass)
        self.profile = _profile_or_none(model)
        res = {round(_residue(u, h) / h, 7) for u in self.u_list}
        if len(res) != 1:
            raise GridMisalignment("all u must be congruent modulo h")
        offset = _residue(self.u_list[0], h)
        if margin is None:
            margin = 40.0 / self.profile.alpha0 if self.profile else 20.0
        top = max(self.u_list) + max(margin, 2 * h)
        n_levels = int(math.ceil((top - offset) / h)) + 1
        top_error = math.exp(-self.profile.alpha0 * top) if self.profile else 0.0
        self.state = BarrierCdf.initial(h, offset, n_levels, top_error)
        self.u_index = [self.state.index(u) for u in self.u_list]

    def step(self) -> BarrierCdf:
        self.state = barrier_step(self.state, self.lattice, self.model.N)
        return self.state

    def run(self, n_max: int, converge: bool = True, tol: float = 1e-12, rtol: float = 1e-9,
            max_iter: int | None = None):
        """Evolve to ``n_max`` recording ``F_n(u)``; then, if ``converge``, iterate on
        to the fixed point.  Returns ``(history, limit, iterations)`` where
        ``history[n] = F_n(u)`` (row 0 is generation 0)."""
        idx = np.array(self.u_index)
        top_u = idx.max()
        hist = [self.state.exceed[idx].copy()]
        for _ in range(n_max):
            hist.append(self.step().exceed[idx].copy())
        history = np.array(hist)
        if not converge:
            return history, history[-1].copy(), n_max
        if max_iter is None:
            max_iter = max(10 * n_max, MIN_ITER_CAP)
        quiet = 0
        prev = self.state.exceed[:top_u + 1].copy()
        it = n_max
        while quiet < 2:
            if it >= max_iter:
                raise NonConvergence(
                    f"barrier recursion not converged after {it} generations "
                    "(model outside the drift-to-minus-infinity regime or tolerance too small)")
            cur = self.step().exceed[:top_u + 1]
            it += 1
            diff = np.abs(cur - prev)
            pos = cur > 0
            rel = float(np.max(diff[pos] / cur[pos])) if pos.any() else 0.0
            quiet = quiet + 1 if (diff.max() < tol and rel < rtol) else 0
            prev = cur.copy()
        return history, self.state.exceed[idx].copy(), it


def level_mix(u: float, h: float) -> list[tuple[float, float]]:
    """Grid levels and weights whose mixed exceedance approximates a continuous barrier.

    On a lattice of span ``h`` the exceedance probabilities carry an extra
    factor ``1 + alpha*h/2`` relative to the continuous walk.  With
    ``t = frac(u/h)`` the mixture of the lattice laws at ``(u - h, u)`` with
    weights ``(1/2 - t, 1/2 + t)`` (or at ``(u, u + h)`` with weights
    ``(3/2 - t, t - 1/2)`` once ``t >= 1/2``) cancels the first-order term,
    leaving an O(h^2) discretization error.
    """
    t = u / h - math.floor(u / h)
    if t > 1 - 1e-9:
        t = 0.0
    elif t < 1e-9:
        t = 0.0
    if t < 0.5:
        if u - h <= 0:
            return [(u, 1.0)]
        return [(u - h, 0.5 - t), (u, 0.5 + t)]
    return [(u, 1.5 - t), (u + h, t - 0.5)]


def _raw_laws(model, levels, h, horizon, converge, profile, **kw):
    groups: dict = {}
    for v in levels:
        groups.setdefault(round(_residue(v, h) / h, 7), []).append(v)
    out = {}
    for vs in groups.values():
        dp = BarrierDP(model, vs, h, **kw)
        history, limit, iters = dp.run(horizon, converge=converge)
        for j, v in enumerate(vs):
            F = history[:, j]
            out[v] = (np.clip(np.diff(F), 0.0, None), max(float(limit[j]) - F[-1], 0.0),
                      float(limit[j]), iters)
    return out


def passage_laws(model: BranchingModel, u_list, h: float, n_max: int | None = None,
                 b: float = DEFAULT_B, converge: bool = True,
                 lattice_correction: bool | None = None, **kw) -> dict:
    """First-passage laws ``{u: PassageLaw}`` for several barriers.

    Barriers sharing a residue modulo ``h`` share one DP run.  For laws that
    were discretized from a continuous one, ``lattice_correction`` (default
    on) mixes two neighbouring grid levels, see :func:`level_mix`; lattice
    laws are computed exactly at ``u``.
    """
    u_list = [float(u) for u in u_list]
    if any(not u > 0 for u in u_list):
        raise ValueError("barrier levels u must be > 0")
    if lattice_correction is None:
        lattice_correction = not model.law.is_discrete
    profile = _profile_or_none(model)
    horizon = n_max if n_max is not None else max(default_horizon(profile, u, b) for u in u_list)
    plan = {u: (level_mix(u, h) if lattice_correction else [(u, 1.0)]) for u in u_list}
    levels = sorted({v for mix in plan.values() for v, _ in mix})
    raw = _raw_laws(model, levels, h, horizon, converge, profile, **kw)
    rho0 = profile.rho0 if profile else None
    out = {}
    for u, mix in plan.items():
        probs = sum(w * raw[v][0] for v, w in mix)
        censored = sum(w * raw[v][1] for v, w in mix)
        surv = sum(w * raw[v][2] for v, w in mix)
        iters = max(raw[v][3] for v, _ in mix)
        out[u] = PassageLaw(u, h, probs, censored, surv, iters, rho0)
    return out


def passage_law(model: BranchingModel, u: float, n_max: int | None = None, h: float = 0.01,
                **kw) -> PassageLaw:
    """``P[tau_u = n]`` for ``n <= n_max`` with censored mass and ``P[tau_u < inf]``."""
    return passage_laws(model, [u], h, n_max=n_max, **kw)[float(u)]


def survival_curve(model: BranchingModel, u_list, h: float, **kw) -> dict:
    """``{u: (P[tau_u < inf], iterations)}`` from as few DP runs as possible."""
    laws = passage_laws(model, u_list, h, n_max=1, **kw)
    return {u: (law.survival, law.iterations) for u, law in laws.items()}


def survival_probability(model: BranchingModel, u: float, h: float = 0.01,
                         **kw) -> tuple[float, int]:
    """``(P[tau_u < inf], iterations)`` from the fixed point of the recursion."""
    law = passage_laws(model, [u], h, n_max=1, **kw)[float(u)]
    return law.survival, law.iterations


def conditional_passage_law(model: BranchingModel, u: float, n_max: int | None = None,
                            h: float = 0.01, **kw) -> PassageLaw:
    """Law of ``tau_u`` given ``tau_u < inf``.

    ``mean`` and ``variance`` of the result are those of the law restricted
    to the horizon; ``censored`` is the conditional mass beyond it.
    """
    law = passage_law(model, u, n_max=n_max, h=h, **kw)
    return condition(law)


def condition(law: PassageLaw) -> PassageLaw:
    if law.survival < 1e-300:
        raise ZeroDivisionError(f"P[tau_u < inf] = {law.survival:g} is too small to condition on")
    return PassageLaw(law.u, law.h, law.probabilities / law.survival,
                      law.censored / law.survival, 1.0, law.iterations, law.rho0,
                      conditional=True)
