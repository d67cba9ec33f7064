"""Displacement laws, branching models and their lattice discretization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from ._rng import CounterRng

LAW_TYPES = ("normal", "two_point", "finite_lattice")
NORMAL_WINDOW_SD = 8.0


@dataclass(frozen=True)
class DisplacementLaw:
    """Law of a single displacement X.

    Build with :meth:`normal`, :meth:`two_point` or :meth:`finite_lattice`.
    Discrete variants are stored as sorted ``atoms`` / ``probs`` arrays.
    """

    kind: str
    mean_: float = 0.0
    variance: float = 1.0
    atoms: tuple = ()
    probs: tuple = ()
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def normal(cls, mean: float, variance: float) -> "DisplacementLaw":
        if not variance > 0:
            raise ValueError(f"normal variance must be > 0, got {variance}")
        return cls("normal", mean_=float(mean), variance=float(variance),
                   params={"mean": float(mean), "variance": float(variance)})

    @classmethod
    def two_point(cls, a: float, b: float, p: float) -> "DisplacementLaw":
        if a == b:
            raise ValueError("two_point requires a != b")
        if not 0.0 < p < 1.0:
            raise ValueError(f"two_point requires p in (0, 1), got {p}")
        atoms, probs = _merge_atoms([(a, p), (b, 1.0 - p)])
        return cls("two_point", atoms=atoms, probs=probs,
                   params={"a": float(a), "b": float(b), "p": float(p)})

    @classmethod
    def finite_lattice(cls, atoms) -> "DisplacementLaw":
        pairs = [(float(x), float(q)) for x, q in atoms]
        merged = _merge_atoms(pairs)
        return cls("finite_lattice", atoms=merged[0], probs=merged[1],
                   params={"atoms": [[x, q] for x, q in pairs]})

    @property
    def is_discrete(self) -> bool:
        return self.kind != "normal"

    @property
    def mean(self) -> float:
        if self.kind == "normal":
            return self.mean_
        return float(np.dot(self.atoms, self.probs))

    @property
    def var(self) -> float:
        if self.kind == "normal":
            return self.variance
        x, p = np.asarray(self.atoms), np.asarray(self.probs)
        return float(np.dot(p, (x - np.dot(p, x)) ** 2))

    @property
    def support_max(self) -> float:
        return math.inf if self.kind == "normal" else self.atoms[-1]

    @property
    def support_min(self) -> float:
        return -math.inf if self.kind == "normal" else self.atoms[0]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            return ndtr((x - self.mean_) / math.sqrt(self.variance))
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        return cum[np.searchsorted(self.atoms, x, side="right")]

    def to_json(self) -> dict:
        return {"type": self.kind, **self.params}

    @classmethod
    def from_json(cls, spec: dict) -> "DisplacementLaw":
        kind = spec.get("type")
        if kind == "normal":
            return cls.normal(spec["mean"], spec["variance"])
        if kind == "two_point":
            return cls.two_point(spec["a"], spec["b"], spec["p"])
        if kind == "finite_lattice":
            return cls.finite_lattice(spec["atoms"])
        raise ValueError(f"unknown law type {kind!r}; expected one of {LAW_TYPES}")


def _merge_atoms(pairs):
    if not pairs:
        raise ValueError("a discrete law needs at least one atom")
    xs = np.array([x for x, _ in pairs], dtype=float)
    ps = np.array([q for _, q in pairs], dtype=float)
    if np.any(ps < 0):
        raise ValueError("atom probabilities must be nonnegative")
    if abs(ps.sum() - 1.0) > 1e-12:
        raise ValueError(f"atom probabilities sum to {ps.sum()!r}, not 1")
    uniq, inv = np.unique(xs, return_inverse=True)
    merged = np.bincount(inv, weights=ps)
    keep = merged > 0
    return tuple(uniq[keep].tolist()), tuple(merged[keep].tolist())


@dataclass(frozen=True)
class BranchingModel:
    """Every particle has exactly ``N`` children displaced i.i.d. by ``law``."""

    N: int
    law: DisplacementLaw

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"branching number must be an integer >= 1, got {self.N}")

    def to_json(self) -> dict:
        return {"N": self.N, "law": self.law.to_json()}

    @classmethod
    def from_json(cls, spec: dict) -> "BranchingModel":
        return cls(int(spec["N"]), DisplacementLaw.from_json(spec["law"]))


def gauss_ref() -> BranchingModel:
    """N = 2, X ~ Normal(-1, 0.5)."""
    return BranchingModel(2, DisplacementLaw.normal(-1.0, 0.5))


def latt_ref(p: float = 0.05) -> BranchingModel:
    """N = 2, X = +1 w.p. ``p`` and -1 otherwise."""
    return BranchingModel(2, DisplacementLaw.two_point(1.0, -1.0, p))


@dataclass(frozen=True)
class LatticeApprox:
    """Atoms ``offset + k*h`` with probabilities ``weights`` (k = 0, 1, ...)."""

    h: float
    offset: float
    weights: np.ndarray
    dropped_mass: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return self.offset + self.h * np.arange(len(self.weights))

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.positions) / self.weights.sum())

    @property
    def var(self) -> float:
        w = self.weights / self.weights.sum()
        m = float(np.dot(w, self.positions))
        return float(np.dot(w, (self.positions - m) ** 2))

    def log_mgf(self, s: float) -> float:
        return float(logsumexp(s * self.positions, b=self.weights))


def sample(law: DisplacementLaw, rng: CounterRng, size: int | None = None):
    """Draw from ``law`` using the counter-based generator ``rng``.

    Every draw consumes two uniforms.  Normals use the cosine branch of
    Box-Muller; discrete laws use inversion of the sorted CDF.
    """
    n = 1 if size is None else int(size)
    u = rng.uniform(2 * n).reshape(n, 2)
    out = uniforms_to_draws(law, u[:, 0], u[:, 1])
    return float(out[0]) if size is None else out


def uniforms_to_draws(law: DisplacementLaw, u1, u2):
    if law.kind == "normal":
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return law.mean_ + math.sqrt(law.variance) * z
    cum = np.cumsum(law.probs)
    idx = np.minimum(np.searchsorted(cum, 1.0 - u1, side="right"), len(cum) - 1)
    return np.asarray(law.atoms)[idx]


def log_mgf(law: DisplacementLaw, s: float) -> float:
    """log E[exp(s X)]."""
    if law.kind == "normal":
        return law.mean_ * s + 0.5 * law.variance * s * s
    return float(logsumexp(s * np.asarray(law.atoms), b=np.asarray(law.probs)))


def mgf(law: DisplacementLaw, s: float) -> float:
    """E[exp(s X)]; raises OverflowError if it is not representable."""
    lm = log_mgf(law, s)
    if lm > 709.78:
        raise OverflowError(f"mgf({s}) = exp({lm}) overflows a double")
    return math.exp(lm)


def discretize(law: DisplacementLaw, h: float, truncation_mass: float = 1e-12) -> LatticeApprox:
    """Put ``law`` on the grid ``h * Z``.

    Normal atom ``k`` receives the mass of ``[(k - 1/2) h, (k + 1/2) h)``
    inside a window of at least 8 standard deviations, widened if needed so
    that the cut tails weigh at most ``truncation_mass``.  Discrete atoms
    already on a grid of step ``h`` are kept exactly; other atoms are
    rounded to the nearest multiple of ``h``.
    """
    if not h > 0:
        raise ValueError(f"grid step must be > 0, got {h}")
    if not 0.0 < truncation_mass <= 1e-6:
        raise ValueError("truncation_mass must lie in (0, 1e-6]")
    if law.is_discrete:
        xs = np.asarray(law.atoms)
        ps = np.asarray(law.probs)
        steps = (xs - xs[0]) / h
        if np.allclose(steps, np.round(steps), rtol=0, atol=1e-9):
            offset, k = xs[0], np.round(steps).astype(np.int64)
        else:
            k_abs = np.round(xs / h).astype(np.int64)
            offset, k = k_abs.min() * h, k_abs - k_abs.min()
        weights = np.zeros(int(k.max()) + 1)
        np.add.at(weights, k, ps)
        return LatticeApprox(h, float(offset), weights, 0.0)

    sd = math.sqrt(law.variance)
    z = max(NORMAL_WINDOW_SD, -float(ndtri(truncation_mass / 2.0)))
    k_lo = math.floor((law.mean_ - z * sd) / h)
    k_hi = math.ceil((law.mean_ + z * sd) / h)
    k = np.arange(k_lo, k_hi + 1)
    edges = (np.append(k - 0.5, k_hi + 0.5) * h - law.mean_) / sd
    # lower CDF below the mean, upper tail above, so both tails keep relative precision
    lower = ndtr(edges)
    upper = ndtr(-edges)
    weights = np.where(edges[1:] <= 0, lower[1:] - lower[:-1], upper[:-1] - upper[1:])
    dropped = float(lower[0] + upper[-1])
    weights = weights / weights.sum()
    return LatticeApprox(h, float(k_lo * h), weights, dropped)
