"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary
(section "acceptance criteria") and then asserts it.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from brwpass.brw_dp import passage_law, passage_laws
from brwpass.mc_engine import estimate_block_constant, replicate, simulate_once
from brwpass.models import gauss_ref, latt_ref
from brwpass.rw_oracle import petrov_ratio_study
from brwpass.spectral import Psi, legendre, petrov_rhs, psi_derivatives, solve_alpha0
from brwpass.verify import check_clt, check_cramer_tail, check_ld, check_lln
from enumeration import brute_force_tau

LN2 = math.log(2)


def test_criterion_01_spectral_closed_forms(criterion):
    t = time.perf_counter()
    g, l = solve_alpha0(gauss_ref()), solve_alpha0(latt_ref())
    lg = legendre(gauss_ref(), g.rho0)
    elapsed = time.perf_counter() - t
    got = [g.alpha0, g.rho0, g.rho_star, lg, l.alpha0, l.rho0]
    want = [3.1078860, 0.5539430, -0.1674454, 1.7215915, 2.0081456, 0.4898979]
    errs = [abs(a - b) for a, b in zip(got, want)]
    ok = max(errs) <= 1e-6 and elapsed < 1.0
    criterion(1, "spectral closed forms", ok, f"max error {max(errs):.2e}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_legendre_suite(criterion):
    t = time.perf_counter()
    m = gauss_ref()
    prof = solve_alpha0(m)
    duality = max(abs(legendre(m, psi_derivatives(m, a)[0]) + Psi(m, a)
                      - a * psi_derivatives(m, a)[0]) for a in np.linspace(-3, 6, 50))
    xs = np.linspace(-2, 2, 50)
    v = np.array([legendre(m, x) for x in xs])
    mids = np.array([legendre(m, 0.5 * (a + b)) for a, b in zip(xs[:-1], xs[1:])])
    convex = bool(np.all(mids <= 0.5 * (v[:-1] + v[1:]) + 1e-9))
    at_mean = abs(legendre(m, m.law.mean) + LN2)
    grid = np.linspace(0.05, 3.0, 3000)
    rates = np.array([legendre(m, r) / r for r in grid])
    floor_ok = bool(np.all(rates >= prof.alpha0 - 1e-10))
    argmin_ok = abs(grid[np.argmin(rates)] - prof.rho0) <= grid[1] - grid[0]
    elapsed = time.perf_counter() - t
    ok = duality <= 1e-9 and convex and at_mean <= 1e-9 and floor_ok and argmin_ok \
        and elapsed < 1.0
    criterion(2, "Legendre suite", ok,
              f"duality {duality:.1e}, convex {convex}, floor {floor_ok}, "
              f"argmin at rho0 {argmin_ok}, {elapsed:.3f}s")
    assert ok


def test_criterion_03_petrov(criterion):
    t = time.perf_counter()
    m = gauss_ref()
    rho = solve_alpha0(m).rho0
    r = {}
    for n in (100, 400):
        log_exact = norm.logsf((n * rho + n) / math.sqrt(0.5 * n))
        r[n] = math.exp(petrov_rhs(m, n, 0, 0.0, rho, log=True) - log_exact)
    grid_ratio = petrov_ratio_study(m, rho, [100], 0.01)[0][3]
    elapsed = time.perf_counter() - t
    ok = abs(r[100] - 1) <= 0.01 and abs(r[400] - 1) <= 0.003 and abs(grid_ratio - 1) <= 0.05 \
        and elapsed < 60
    criterion(3, "Petrov expansion", ok,
              f"closed-form ratio {r[100]:.5f} (n=100), {r[400]:.5f} (n=400); "
              f"grid ratio {grid_ratio:.5f}; {elapsed:.1f}s")
    assert ok


def test_criterion_04_dp_exactness(criterion):
    t = time.perf_counter()
    m = latt_ref()
    law = passage_law(m, 0.5, n_max=3, h=1.0, converge=False)
    enum = brute_force_tau([1.0, -1.0], [0.05, 0.95], 0.5)
    enum_err = float(np.max(np.abs(law.probabilities - enum)))
    fixed = np.max(np.abs(law.probabilities - [0.0975, 0.0, 0.01747048]))
    worst = 0.0
    for u, seed in ((0.5, 1001), (1.5, 1002)):
        dp = passage_law(m, u, n_max=10, h=1.0).probabilities
        stats = replicate(m, u, 10, 10**6, base_seed=seed)
        emp = stats.pmf(10)
        impossible = dp == 0
        if np.any(emp[impossible] > 0):  # generations the DP rules out must never occur
            worst = math.inf
        se = np.sqrt(dp[~impossible] * (1 - dp[~impossible]) / 10**6)
        worst = max(worst, float(np.max(np.abs(emp[~impossible] - dp[~impossible]) / se)))
    elapsed = time.perf_counter() - t
    ok = enum_err <= 1e-12 and fixed <= 1e-7 and worst <= 3 and elapsed < 300
    criterion(4, "BRW DP exactness", ok,
              f"enumeration error {enum_err:.1e}; worst MC deviation {worst:.2f} SE; "
              f"{elapsed:.1f}s")
    assert ok


def test_criterion_05_cramer_tail(criterion):
    t = time.perf_counter()
    g = check_cramer_tail(gauss_ref(), range(10, 26), h=0.01)
    l = check_cramer_tail(latt_ref(), [0.5 + k for k in range(21)], h=1.0)
    elapsed = time.perf_counter() - t
    ok = g.passed and l.passed and elapsed < 600
    criterion(5, "Cramer tail slope", ok,
              f"GAUSS {g.rows[0]['relative_error']:+.2e}, LATT {l.rows[0]['relative_error']:+.2e}"
              f" relative; {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def gauss_passage_laws():
    return passage_laws(gauss_ref(), [10.0, 20.0, 40.0], 0.01)


def test_criterion_06_lln(criterion, gauss_passage_laws):
    t = time.perf_counter()
    rep = check_lln(gauss_ref(), [10, 20, 40], tol=0.10, tol_u=20, laws=gauss_passage_laws)
    elapsed = time.perf_counter() - t
    devs = [r["deviation"] for r in rep.rows]
    ok = rep.passed and elapsed < 900
    criterion(6, "law of large numbers", ok,
              "deviations " + ", ".join(f"{d:.4f}" for d in devs) + " at u = 10, 20, 40")
    assert ok


def test_criterion_07_clt(criterion, gauss_passage_laws):
    t = time.perf_counter()
    good = check_clt(gauss_ref(), [10, 20, 40], tol=0.08, laws=gauss_passage_laws)
    raw = check_clt(gauss_ref(), [10, 20, 40], tol=0.08, reading="raw",
                    laws=gauss_passage_laws)
    elapsed = time.perf_counter() - t
    ok = good.passed and not raw.fitted["discriminator"]["consistent"] and elapsed < 900
    criterion(7, "central limit theorem", ok,
              "KS " + ", ".join(f"{r['measured']:.4f}" for r in good.rows)
              + f"; raw reading prefers scale {raw.fitted['discriminator']['best_scale']:.4g}")
    assert ok


def test_criterion_08_large_deviations(criterion):
    t = time.perf_counter()
    rho0 = solve_alpha0(gauss_ref()).rho0
    reps = [check_ld(gauss_ref(), f * rho0, [20, 30, 40], h=0.01, rate_tol=0.10,
                     window=(30, 40), spread_tol=1.2) for f in (1.2, 0.8)]
    elapsed = time.perf_counter() - t
    ok = all(r.passed for r in reps) and elapsed < 1200
    detail = "; ".join(
        f"rho={r.fitted['rho']:.4f}: rate error {abs(r.rows[2]['measured'] - 1):.3f}, "
        f"spread {r.rows[-1]['measured']:.4f}" for r in reps)
    criterion(8, "large deviations", ok, f"{detail}; {elapsed:.1f}s")
    assert ok


def test_criterion_09_block_constant(criterion):
    t = time.perf_counter()
    alpha = solve_alpha0(latt_ref()).alpha0
    est, se = estimate_block_constant(latt_ref(), alpha, 1, 10**6, base_seed=2718)
    exact = 0.0975 * (math.exp(alpha) - 1)
    elapsed = time.perf_counter() - t
    ok = abs(est - exact) <= 3 * se and abs(exact - 0.6288252) <= 1e-7 and elapsed < 60
    criterion(9, "block constant", ok,
              f"{est:.5f} +- {se:.5f} vs {exact:.7f} ({abs(est - exact) / se:.2f} SE); "
              f"{elapsed:.1f}s")
    assert ok


def test_criterion_10_determinism(criterion):
    m = latt_ref()
    a = replicate(m, 1.5, 12, 100_000, base_seed=0xC0FFEE, workers=1)
    b = replicate(m, 1.5, 12, 100_000, base_seed=0xC0FFEE, workers=8)
    same = a == b and a.to_json() == b.to_json()
    mismatches = 0
    for i in range(10_000):
        on = simulate_once(m, 2.5, 12, 0xC0FFEE ^ i, prune=True)
        off = simulate_once(m, 2.5, 12, 0xC0FFEE ^ i, prune=False)
        mismatches += (on.crossed, on.tau if on.crossed else 0) != \
            (off.crossed, off.tau if off.crossed else 0)
    ok = same and mismatches == 0
    criterion(10, "engineering determinism", ok,
              f"workers 1 vs 8 identical: {same}; pruning mismatches {mismatches}/10000")
    assert ok
