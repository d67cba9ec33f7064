"""Cumulant generating function of the branching walk and everything derived from it.

``psi(s) = N E[exp(s X)]`` and ``Psi = log psi``.  The quantities here are the
Cramér root ``alpha0`` (``psi(alpha0) = 1`` on the increasing branch), the
tilted drift/variance ``rho0 = Psi'(alpha0)``, ``sigma0_sq = Psi''(alpha0)``,
the speed ``rho* = inf_{s>0} Psi(s)/s``, the Legendre transform ``Psi*`` and
the closed-form asymptotic shapes for first-passage probabilities.

Every formula that needs a standard deviation uses ``sqrt(Psi'')``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoRoot, OutOfRange, SpeedDivergence
from .models import BranchingModel, log_mgf

RESIDUAL_TOL = 1e-12
MAX_ITER = 200
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class SpectralProfile:
    alpha0: float
    rho0: float
    sigma0_sq: float
    rho_star: float
    s_star: float
    alpha_inf: float = math.inf
    rho_inf: float = math.inf

    @property
    def sigma0(self) -> float:
        return math.sqrt(self.sigma0_sq)

    def to_json(self) -> dict:
        return {k: (v if math.isfinite(v) else ("inf" if v > 0 else "-inf"))
                for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class LdPrediction:
    rho: float
    alpha: float
    u: float
    rate: float
    theta: float
    prefactor: float
    regime: str


def psi(model: BranchingModel, s: float) -> tuple[float, float]:
    """Return ``(psi(s), Psi(s))``."""
    big_psi = math.log(model.N) + log_mgf(model.law, s)
    if big_psi > 709.78:
        raise OverflowError(f"psi({s}) overflows a double")
    return math.exp(big_psi), big_psi


def Psi(model: BranchingModel, s: float) -> float:
    return math.log(model.N) + log_mgf(model.law, s)


def psi_derivatives(model: BranchingModel, s: float) -> tuple[float, float]:
    """``(Psi'(s), Psi''(s))``: mean and variance of the step tilted by ``exp(s x)``."""
    law = model.law
    if law.kind == "normal":
        return law.mean_ + law.variance * s, law.variance
    x = np.asarray(law.atoms)
    logw = s * x + np.log(np.asarray(law.probs))
    w = np.exp(logw - logw.max())
    w /= w.sum()
    m = float(np.dot(w, x))
    return m, float(np.dot(w, (x - m) ** 2))


def rho_bounds(model: BranchingModel) -> tuple[float, float]:
    """Open range of ``Psi'`` over the real line."""
    return model.law.support_min, model.law.support_max


def _newton_bisect(f, df, lo, hi, tol=RESIDUAL_TOL):
    """Root of an increasing ``f`` on ``[lo, hi]`` with ``f(lo) <= 0 <= f(hi)``."""
    x = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if fx > 0:
            hi = x
        else:
            lo = x
        d = df(x)
        step = x - fx / d if d > 0 else None
        x = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            return x
    return x


def tilt_for_speed(model: BranchingModel, rho: float) -> float:
    """The tilt ``alpha`` with ``Psi'(alpha) = rho``."""
    lo_b, hi_b = rho_bounds(model)
    if not lo_b < rho < hi_b:
        raise OutOfRange(f"rho={rho} outside the range ({lo_b}, {hi_b}) of Psi'", (lo_b, hi_b))
    d1 = lambda s: psi_derivatives(model, s)[0] - rho
    d2 = lambda s: psi_derivatives(model, s)[1]
    lo, hi = -1.0, 1.0
    for _ in range(MAX_DOUBLINGS):
        if d1(hi) >= 0:
            break
        lo, hi = hi, 2 * hi
    for _ in range(MAX_DOUBLINGS):
        if d1(lo) <= 0:
            break
        hi, lo = lo, 2 * lo
    return _newton_bisect(d1, d2, lo, hi)


def speed_rho_star(model: BranchingModel) -> tuple[float, float]:
    """``(rho*, s*)`` with ``rho* = min_{s>0} Psi(s)/s`` attained at ``s*``."""
    if model.N == 1:
        return model.law.mean, 0.0
    law = model.law
    if law.is_discrete and model.N * law.probs[-1] >= 1.0:
        raise SpeedDivergence(
            "Psi(s)/s decreases towards its infimum as s -> inf; no minimizer",
            infimum=law.support_max)
    g = lambda s: s * psi_derivatives(model, s)[0] - Psi(model, s)
    dg = lambda s: s * psi_derivatives(model, s)[1]
    lo, hi = 0.0, 1.0
    for _ in range(MAX_DOUBLINGS):
        if g(hi) > 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise SpeedDivergence("no minimizer of Psi(s)/s found", infimum=None)
    s_star = _newton_bisect(g, dg, lo, hi)
    return Psi(model, s_star) / s_star, s_star


def solve_alpha0(model: BranchingModel) -> SpectralProfile:
    """Cramér root on the increasing branch of Psi, plus the companion quantities."""
    lo_b, hi_b = rho_bounds(model)
    mean = model.law.mean
    if mean >= 0:
        raise NoRoot(f"E[X] = {mean} >= 0: min over s>0 of psi is psi(0) = {model.N}",
                     attained_min=float(model.N))
    if hi_b <= 0:
        raise NoRoot("X <= 0 a.s.: Psi is decreasing and has no zero with Psi' > 0",
                     attained_min=0.0)
    s_min = tilt_for_speed(model, 0.0)
    psi_min = Psi(model, s_min)
    if psi_min >= 0:
        raise NoRoot(f"min psi = {math.exp(psi_min):.6g} >= 1; no Cramér root",
                     attained_min=math.exp(psi_min))
    f = lambda s: Psi(model, s)
    df = lambda s: psi_derivatives(model, s)[0]
    lo, hi = s_min, max(1.0, 2 * s_min)
    for _ in range(MAX_DOUBLINGS):
        if f(hi) > 0:
            break
        lo, hi = hi, 2 * hi
    alpha0 = _newton_bisect(f, df, lo, hi)
    rho0, sigma0_sq = psi_derivatives(model, alpha0)
    rho_star, s_star = speed_rho_star(model)
    return SpectralProfile(alpha0, rho0, sigma0_sq, rho_star, s_star, math.inf, hi_b)


def legendre(model: BranchingModel, x: float) -> float:
    """``Psi*(x) = sup_s (s x - Psi(s))``."""
    lo_b, hi_b = rho_bounds(model)
    if x >= hi_b:
        raise DomainError(f"Psi*({x}) requested at or beyond rho_inf = {hi_b}")
    if x < lo_b:
        return math.inf
    if x == lo_b:
        return -math.log(model.N * model.law.probs[0])
    alpha = tilt_for_speed(model, x)
    return x * alpha - Psi(model, alpha)


def _tilt_and_sigma(model, rho):
    alpha = tilt_for_speed(model, rho)
    return alpha, math.sqrt(psi_derivatives(model, alpha)[1])


def petrov_rhs(model: BranchingModel, n: int, j: int, eps: float, rho: float,
               log: bool = False) -> float:
    """Sharp asymptotic for ``P[S_{n+j} > n (rho + eps)]`` of the single walk,
    normalized by ``N^{-(n+j)}`` as in the branching setting.

    ``log=True`` returns the natural log instead of the value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha, sigma = _tilt_and_sigma(model, rho)
    if alpha <= 0:
        raise DomainError(f"tilt alpha={alpha} must be > 0 (need rho > E[X])")
    val = (-math.log(alpha * sigma * math.sqrt(2 * math.pi * n))
           - n * legendre(model, rho)
           - (n + j) * math.log(model.N)
           + j * Psi(model, alpha)
           - alpha * n * eps
           - (-rho * j + n * eps) ** 2 / (2 * sigma ** 2 * n))
    return val if log else math.exp(val)


def passage_shape_rw(model: BranchingModel, n: int, rho: float, a_n: float = 0.0,
                     j_n: int = 0, log: bool = False) -> float:
    """Shape of ``P[first passage of the single walk over n*rho + a_n at time n + j_n]``
    without its unknown constant.

    ``a_n`` shifts the level (any rho); ``j_n`` shifts the time and is only
    available at ``rho = rho0``.  The two cannot be combined.
    """
    if a_n != 0 and j_n != 0:
        raise ValueError("a_n and j_n cannot both be nonzero")
    if model.law.mean >= 0:
        raise DomainError("the single walk must drift downwards (E[X] < 0)")
    logN = math.log(model.N)
    if j_n != 0:
        prof = solve_alpha0(model)
        if abs(rho - prof.rho0) > 1e-9 * max(1.0, abs(rho)):
            raise ValueError("time shifts j_n are only defined at rho = rho0")
        val = (-legendre(model, prof.rho0) * n
               - prof.rho0 ** 2 * j_n ** 2 / (2 * prof.sigma0_sq * n)
               - 0.5 * math.log(n) - (n + j_n) * logN)
    else:
        alpha = tilt_for_speed(model, rho)
        if alpha <= 0:
            raise DomainError(f"need rho = Psi'(alpha) with alpha > 0, got alpha={alpha}")
        val = -alpha * a_n - legendre(model, rho) * n - 0.5 * math.log(n) - n * logN
    return val if log else math.exp(val)


def brw_passage_shape(model: BranchingModel, n: int, a_n: float = 0.0, j_n: int = 0,
                      rho: float | None = None, log: bool = False) -> float:
    """Shape of ``P[tau_{n rho + a_n} = n]`` (or ``P[tau_{n rho0} = n + j_n]``) for the
    branching walk, without the unknown constant.  ``rho`` defaults to ``rho0``.
    """
    if a_n != 0 and j_n != 0:
        raise ValueError("a_n and j_n cannot both be nonzero")
    prof = solve_alpha0(model)
    if rho is None:
        rho = prof.rho0
    if j_n != 0:
        if abs(rho - prof.rho0) > 1e-9 * max(1.0, abs(rho)):
            raise ValueError("time shifts j_n are only defined at rho = rho0")
        val = (-prof.alpha0 * prof.rho0 * n
               - prof.rho0 ** 2 * j_n ** 2 / (2 * prof.sigma0_sq * n)
               - 0.5 * math.log(n))
    else:
        if not 0 < rho:
            raise DomainError("rho must be > 0")
        alpha = tilt_for_speed(model, rho)
        val = -alpha * a_n - legendre(model, rho) * n - 0.5 * math.log(n)
    return val if log else math.exp(val)


def frac_part(q: float, tol: float = 1e-9) -> float:
    """Fractional part, snapping values within ``tol`` (relative) of an integer to 0."""
    k = round(q)
    if abs(q - k) <= tol * max(1.0, abs(q)):
        return 0.0
    return q - math.floor(q)


def floor_snap(q: float, tol: float = 1e-9) -> int:
    k = round(q)
    if abs(q - k) <= tol * max(1.0, abs(q)):
        return int(k)
    return math.floor(q)


def ld_prediction(model: BranchingModel, u: float, rho: float) -> LdPrediction:
    """Rate ``Psi*(rho)/rho``, oscillation ``Theta(u)`` and prefactor ``psi(alpha)^-Theta / sqrt(u)``."""
    if not u > 0:
        raise DomainError("u must be > 0")
    if not rho > 0:
        raise DomainError("rho must be > 0")
    alpha = tilt_for_speed(model, rho)
    big_psi = Psi(model, alpha)
    theta = frac_part(u / rho)
    if abs(big_psi) <= 1e-12:
        regime = "critical"
    else:
        regime = "below_speed" if big_psi > 0 else "above_speed"
    return LdPrediction(rho=rho, alpha=alpha, u=u,
                        rate=legendre(model, rho) / rho, theta=theta,
                        prefactor=math.exp(-theta * big_psi) / math.sqrt(u),
                        regime=regime)
