"""Direct Monte Carlo for the first-passage generation of the branching walk.

Each replicate explores its N-ary tree depth first.  The displacement of a
node is a fixed function of ``(seed, path)``: the root key is
``finalize(seed)`` and child ``i`` of a node keyed ``k`` gets key
``stream(k, i)``.  The node's two uniforms are ``finalize(key ^ SALT_A)`` and
``finalize(key ^ SALT_B)``.  Consequently pruning or visiting order can never
change a sampled value, and a run is reproducible from its seed alone.

Pruning rules (all exact on the sampled, horizon-truncated tree):

* depth: once a crossing at generation ``d*`` is known, a node at depth
  ``d >= d* - 1`` cannot produce an earlier crossing;
* support: if displacements are bounded above by ``x_max``, a node at
  position ``x`` and depth ``d`` with ``x + (D - d) x_max <= u`` cannot cross
  before depth ``D = min(horizon, d* - 1)``.

An optional position ``floor`` drops nodes below it.  This one is not exact;
:func:`floor_bias_bound` bounds the probability it changes an outcome.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import spectral
from ._rng import MASK64, SALT_A, SALT_B, nb_finalize, nb_open_uniform, nb_stream
from .errors import NodeBudgetExceeded
from .models import BranchingModel

DEFAULT_NODE_BUDGET = 10**8
CHUNK = 8192
KURTOSIS_WARN = 1e3


@njit(cache=True)
def _draw(key, kind, mean, sd, atoms, cum):
    u1 = nb_open_uniform(nb_finalize(key ^ np.uint64(SALT_A)))
    u2 = nb_open_uniform(nb_finalize(key ^ np.uint64(SALT_B)))
    if kind == 0:
        return mean + sd * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    t = 1.0 - u1
    j = np.searchsorted(cum, t, side="right")
    if j >= atoms.shape[0]:
        j = atoms.shape[0] - 1
    return atoms[j]


@njit(cache=True, nogil=True)
def _dfs(seed, N, kind, mean, sd, atoms, cum, u, horizon, prune, xmax, floor, budget):
    """Returns (tau or 0 if not crossed, nodes generated, overflow flag)."""
    cap = horizon * N + 2
    st_d = np.empty(cap, np.int64)
    st_x = np.empty(cap, np.float64)
    st_k = np.empty(cap, np.uint64)
    st_d[0] = 0
    st_x[0] = 0.0
    st_k[0] = nb_finalize(np.uint64(seed))
    sp = 1
    best = horizon + 1
    nodes = 0
    bounded = math.isfinite(xmax)
    while sp > 0:
        sp -= 1
        d = st_d[sp]
        x = st_x[sp]
        key = st_k[sp]
        if prune:
            if d >= best - 1:
                continue
            limit = min(horizon, best - 1)
            if bounded and x + (limit - d) * xmax <= u:
                continue
            if x < floor:
                continue
        for i in range(N):
            ck = nb_stream(key, np.uint64(i))
            nodes += 1
            if nodes > budget:
                return 0, nodes, True
            y = x + _draw(ck, kind, mean, sd, atoms, cum)
            crossed = y > u
            if crossed and d + 1 < best:
                best = d + 1
            if d + 1 < horizon and (not crossed or not prune):
                st_d[sp] = d + 1
                st_x[sp] = y
                st_k[sp] = ck
                sp += 1
    tau = best if best <= horizon else 0
    return tau, nodes, False


@njit(cache=True, nogil=True)
def _dfs_batch(seeds, N, kind, mean, sd, atoms, cum, u, horizon, prune, xmax, floor, budget):
    m = seeds.shape[0]
    taus = np.zeros(m, np.int64)
    nodes = np.zeros(m, np.int64)
    over = np.zeros(m, np.bool_)
    for r in range(m):
        t, c, o = _dfs(seeds[r], N, kind, mean, sd, atoms, cum, u, horizon, prune, xmax,
                       floor, budget)
        taus[r] = t
        nodes[r] = c
        over[r] = o
    return taus, nodes, over


@njit(cache=True, nogil=True)
def _block_values(seeds, N, kind, mean, sd, atoms, cum, L, alpha):
    m = seeds.shape[0]
    out = np.empty(m, np.float64)
    cap = L * N + 2
    st_d = np.empty(cap, np.int64)
    st_x = np.empty(cap, np.float64)
    st_k = np.empty(cap, np.uint64)
    gen_max = np.empty(L + 1, np.float64)
    for r in range(m):
        for d in range(L + 1):
            gen_max[d] = -np.inf
        gen_max[0] = 0.0
        st_d[0] = 0
        st_x[0] = 0.0
        st_k[0] = nb_finalize(np.uint64(seeds[r]))
        sp = 1
        while sp > 0:
            sp -= 1
            d = st_d[sp]
            x = st_x[sp]
            key = st_k[sp]
            for i in range(N):
                ck = nb_stream(key, np.uint64(i))
                y = x + _draw(ck, kind, mean, sd, atoms, cum)
                if y > gen_max[d + 1]:
                    gen_max[d + 1] = y
                if d + 1 < L:
                    st_d[sp] = d + 1
                    st_x[sp] = y
                    st_k[sp] = ck
                    sp += 1
        running = -np.inf
        for d in range(1, L + 1):
            if gen_max[d] > running:
                running = gen_max[d]
        v = math.exp(alpha * running) - math.exp(alpha * gen_max[L - 1])
        out[r] = v if v > 0 else 0.0
    return out


def _law_arrays(model: BranchingModel):
    law = model.law
    if law.kind == "normal":
        return 0, law.mean_, math.sqrt(law.variance), np.zeros(1), np.ones(1), math.inf
    atoms = np.asarray(law.atoms, dtype=np.float64)
    cum = np.cumsum(np.asarray(law.probs, dtype=np.float64))
    return 1, 0.0, 0.0, atoms, cum, float(atoms[-1])


@dataclass(frozen=True)
class SimOutcome:
    crossed: bool
    tau: int  # meaningful only when crossed
    nodes_expanded: int


def simulate_once(model: BranchingModel, u: float, horizon: int, seed: int, prune: bool = True,
                  floor: float | None = None, node_budget: int = DEFAULT_NODE_BUDGET) -> SimOutcome:
    """First crossing generation of level ``u`` on one sampled tree truncated at ``horizon``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    kind, mean, sd, atoms, cum, xmax = _law_arrays(model)
    fl = -math.inf if floor is None else float(floor)
    tau, nodes, over = _dfs(np.uint64(seed), model.N, kind, mean, sd, atoms, cum, float(u),
                            int(horizon), prune, xmax, fl, int(node_budget))
    if over:
        raise NodeBudgetExceeded(f"seed {seed}: more than {node_budget} nodes")
    return SimOutcome(tau > 0, int(tau), int(nodes))


@dataclass
class RunStats:
    """Counters over replicates plus streaming moments of ``tau`` on crossed replicates.

    ``mean``/``m2`` follow Welford within a chunk and the pairwise update of
    Chan, Golub and LeVeque across chunks:
    ``m2 = m2_a + m2_b + delta^2 n_a n_b / n``.
    """

    base_seed: int
    replicates: int = 0
    crossings: int = 0
    histogram: dict = field(default_factory=dict)
    mean: float = 0.0
    m2: float = 0.0
    nodes: int = 0
    overflowed: list = field(default_factory=list)

    @property
    def censored(self) -> int:
        return self.replicates - self.crossings - len(self.overflowed)

    @property
    def variance(self) -> float:
        return self.m2 / self.crossings if self.crossings else math.nan

    def push(self, tau: int):
        self.crossings += 1
        self.histogram[tau] = self.histogram.get(tau, 0) + 1
        delta = tau - self.mean
        self.mean += delta / self.crossings
        self.m2 += delta * (tau - self.mean)

    def merge(self, other: "RunStats") -> "RunStats":
        n = self.crossings + other.crossings
        if other.crossings:
            delta = other.mean - self.mean
            self.m2 = self.m2 + other.m2 + delta * delta * self.crossings * other.crossings / n
            self.mean = self.mean + delta * other.crossings / n
        self.crossings = n
        self.replicates += other.replicates
        self.nodes += other.nodes
        for k, v in other.histogram.items():
            self.histogram[k] = self.histogram.get(k, 0) + v
        self.overflowed.extend(other.overflowed)
        return self

    def pmf(self, n_max: int) -> np.ndarray:
        """Empirical ``P[tau = n]`` for n = 1..n_max (unconditional)."""
        out = np.zeros(n_max)
        for k, v in self.histogram.items():
            if 1 <= k <= n_max:
                out[k - 1] = v
        return out / self.replicates

    def to_json(self) -> dict:
        return {"replicates": self.replicates, "crossings": self.crossings,
                "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
                "mean": self.mean, "variance": self.variance, "base_seed": self.base_seed,
                "overflowed": self.overflowed}

    def histogram_csv(self) -> str:
        lines = ["n,count"] + [f"{k},{v}" for k, v in sorted(self.histogram.items())]
        return "\n".join(lines) + "\n"


def _seeds(base_seed, start, stop):
    """Vectorized ``replicate_seed``: ``base_seed XOR i`` for i in [start, stop)."""
    return np.arange(start, stop, dtype=np.uint64) ^ np.uint64(int(base_seed) & MASK64)


def _run_chunk(model, u, horizon, base_seed, start, stop, prune, floor, budget):
    kind, mean, sd, atoms, cum, xmax = _law_arrays(model)
    seeds = _seeds(base_seed, start, stop)
    fl = -math.inf if floor is None else float(floor)
    taus, nodes, over = _dfs_batch(seeds, model.N, kind, mean, sd, atoms, cum, float(u),
                                   int(horizon), prune, xmax, fl, int(budget))
    stats = RunStats(base_seed, replicates=stop - start, nodes=int(nodes.sum()))
    for i in range(stop - start):
        if over[i]:
            stats.overflowed.append(start + i)
        elif taus[i] > 0:
            stats.push(int(taus[i]))
    return stats


def replicate(model: BranchingModel, u: float, horizon: int, M: int, base_seed: int,
              workers: int = 1, prune: bool = True, floor: float | None = None,
              node_budget: int = DEFAULT_NODE_BUDGET) -> RunStats:
    """``M`` replicates with seeds ``base_seed XOR i``.

    Replicates are cut into fixed chunks of :data:`CHUNK`; chunk statistics
    are merged in chunk order, so the result does not depend on ``workers``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    bounds = [(s, min(s + CHUNK, M)) for s in range(0, M, CHUNK)]
    job = lambda b: _run_chunk(model, u, horizon, base_seed, b[0], b[1], prune, floor,
                               node_budget)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    total = RunStats(base_seed)
    for part in parts:
        total.merge(part)
    return total


def estimate_block_constant(model: BranchingModel, alpha: float, L: int, M: int,
                            base_seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``(exp(alpha Mbar_L) - exp(alpha M_{L-1}))_+``.

    ``Mbar_L`` is the maximum over generations 1..L of a depth-L tree and
    ``M_{L-1}`` the maximum of generation ``L - 1`` (the root, at 0, when L = 1).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if model.N ** L > 10**7:
        raise NodeBudgetExceeded(f"N^L = {model.N ** L} nodes per tree is over budget")
    kind, mean, sd, atoms, cum, _ = _law_arrays(model)
    seeds = _seeds(base_seed, 0, M)
    vals = _block_values(seeds, model.N, kind, mean, sd, atoms, cum, int(L), float(alpha))
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(M)) if M > 1 else math.nan
    if M > 3:
        c = vals - est
        var = float(np.mean(c * c))
        if var > 0:
            kurt = float(np.mean(c ** 4)) / var ** 2
            if kurt > KURTOSIS_WARN:
                warnings.warn(f"block-constant estimator kurtosis {kurt:.3g}: "
                              "variance estimate unreliable (is Psi(2 alpha) finite?)")
    return est, stderr


def floor_bias_bound(model: BranchingModel, u: float, floor: float) -> float:
    """Upper bound on ``P[some node dropped by the position floor would have crossed u]``.

    From a node at ``x`` the subtree exceeds ``u`` with probability at most
    ``exp(-alpha0 (u - x))``.  Summing over the first nodes below ``floor``
    with ``exp(alpha0 x) <= exp(beta x) exp((alpha0 - beta) floor)`` and
    ``E sum_gamma exp(beta S_gamma) = 1 / (1 - psi(beta))`` for ``psi(beta) < 1``
    gives ``exp(-alpha0 u + (alpha0 - beta) floor) / (1 - psi(beta))``,
    minimized here over ``beta``.
    """
    prof = spectral.solve_alpha0(model)
    if floor >= 0:
        return math.inf
    best = math.inf
    for beta in np.linspace(0.0, prof.alpha0, 400)[1:-1]:
        p, _ = spectral.psi(model, float(beta))
        if p < 1:
            best = min(best, math.exp(-prof.alpha0 * u + (prof.alpha0 - beta) * floor) / (1 - p))
    return best
