import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwpass.brw_dp import (BarrierCdf, BarrierDP, PassageLaw, barrier_step, condition,
                            conditional_passage_law, horizon_window, level_mix, passage_law,
                            passage_laws, survival_curve, survival_probability)
from brwpass.errors import GridMisalignment, NonConvergence
from brwpass.models import BranchingModel, DisplacementLaw, discretize, gauss_ref, latt_ref
from brwpass.spectral import solve_alpha0
from enumeration import brute_force_tau


# ---------------------------------------------------------------- barrier_step

def test_first_step_is_cdf_power():
    model = gauss_ref()
    h = 0.05
    lat = discretize(model.law, h)
    state = barrier_step(BarrierCdf.initial(h, 0.0, 200), lat, 2)
    cum = np.cumsum(lat.weights)
    for k in (0, 10, 57, 199):
        level = k * h
        j = int(round((level - lat.offset) / h))
        cdf = cum[min(j, len(cum) - 1)]
        assert state.values[k] == pytest.approx(cdf ** 2, rel=1e-12)


def test_first_step_latt():
    lat = discretize(latt_ref().law, 1.0)
    state = barrier_step(BarrierCdf.initial(1.0, 0.5, 10), lat, 2)
    assert state.at(0.5) == pytest.approx(0.9025, abs=1e-15)
    assert state.generation == 1


def test_step_monotone_contracts():
    model = gauss_ref()
    lat = discretize(model.law, 0.1)
    prev = BarrierCdf.initial(0.1, 0.0, 150)
    for _ in range(30):
        cur = barrier_step(prev, lat, model.N)
        assert np.all((cur.values >= 0) & (cur.values <= 1))
        assert np.all(cur.values <= prev.values + 1e-15)
        assert np.all(np.diff(cur.values) >= -1e-15)
        prev = cur


def test_step_grid_misalignment():
    lat = discretize(latt_ref().law, 1.0)
    with pytest.raises(GridMisalignment):
        barrier_step(BarrierCdf.initial(0.5, 0.0, 10), lat, 2)
    shifted = type(lat)(1.0, -0.7, lat.weights, 0.0)
    with pytest.raises(GridMisalignment):
        barrier_step(BarrierCdf.initial(1.0, 0.0, 10), shifted, 2)
    with pytest.raises(GridMisalignment):
        BarrierDP(latt_ref(), [0.5, 0.7], 1.0)


# ---------------------------------------------------------------- passage law vs enumeration

def test_latt_passage_examples():
    law = passage_law(latt_ref(), 0.5, n_max=3, h=1.0, converge=False)
    assert law.prob(1) == pytest.approx(0.0975, abs=1e-15)
    assert law.prob(2) == 0.0
    expect3 = 0.9025 * (1 - (1 - 0.05 * 0.0975) ** 4)
    assert law.prob(3) == pytest.approx(expect3, abs=1e-15)
    assert law.prob(3) == pytest.approx(0.0174704, abs=1e-7)
    np.testing.assert_allclose(law.probabilities, brute_force_tau([1, -1], [0.05, 0.95], 0.5),
                               rtol=0, atol=1e-12)


small_lattice_laws = st.lists(st.integers(-3, 2), min_size=1, max_size=3, unique=True).flatmap(
    lambda xs: st.tuples(st.just(xs), st.lists(st.floats(0.05, 1.0), min_size=len(xs),
                                               max_size=len(xs))))


@settings(max_examples=25, deadline=None)
@given(small_lattice_laws, st.sampled_from([0.5, 1.5, 2.5]))
def test_dp_equals_enumeration(law_spec, u):
    xs, ws = law_spec
    ps = np.array(ws) / sum(ws)
    model = BranchingModel(2, DisplacementLaw.finite_lattice(list(zip(xs, ps))))
    law = passage_law(model, u, n_max=3, h=1.0, converge=False)
    np.testing.assert_allclose(law.probabilities, brute_force_tau(xs, ps, u), rtol=0,
                               atol=1e-12)


def test_dp_equals_enumeration_half_grid():
    atoms, probs = [-1.5, 0.5, 1.0], [0.7, 0.2, 0.1]
    model = BranchingModel(2, DisplacementLaw.finite_lattice(list(zip(atoms, probs))))
    law = passage_law(model, 0.75, n_max=3, h=0.25, converge=False)
    np.testing.assert_allclose(law.probabilities, brute_force_tau(atoms, probs, 0.75),
                               rtol=0, atol=1e-12)


# ---------------------------------------------------------------- survival

def test_survival_zero_for_nonpositive_steps():
    model = BranchingModel(2, DisplacementLaw.two_point(-1.0, -2.0, 0.5))
    surv, _ = survival_probability(model, 0.5, h=1.0)
    assert surv == 0.0


def test_survival_nonincreasing_in_u():
    curve = survival_curve(latt_ref(), [0.5, 1.5, 2.5], 1.0)
    s = [curve[u][0] for u in (0.5, 1.5, 2.5)]
    assert s[0] >= s[1] >= s[2] > 0


def test_survival_grid_convergence():
    a, _ = survival_probability(gauss_ref(), 5.0, h=0.02)
    b, _ = survival_probability(gauss_ref(), 5.0, h=0.01)
    assert abs(a / b - 1) < 0.01


def test_non_convergence_is_reported():
    dp = BarrierDP(gauss_ref(), [5.0], 0.01)
    with pytest.raises(NonConvergence):
        dp.run(5, max_iter=8)


def test_rejects_nonpositive_barrier():
    with pytest.raises(ValueError):
        passage_law(gauss_ref(), -1.0)
    with pytest.raises(ValueError):
        passage_laws(latt_ref(), [0.5, 0.0], 1.0)


# ---------------------------------------------------------------- conservation and conditioning

@pytest.mark.parametrize("model,u,h", [(latt_ref(), 2.5, 1.0), (gauss_ref(), 3.0, 0.01)])
@pytest.mark.parametrize("n_max", [1, 5, 40])
def test_mass_conservation(model, u, h, n_max):
    law = passage_law(model, u, n_max=n_max, h=h)
    assert law.total == pytest.approx(1.0, abs=1e-9)
    assert np.all(law.probabilities >= 0) and law.censored >= 0


def test_conditional_law():
    model = latt_ref()
    law = passage_law(model, 0.5, n_max=60, h=1.0)
    cond = conditional_passage_law(model, 0.5, n_max=60, h=1.0)
    assert cond.probabilities.sum() == pytest.approx(1 - cond.censored, abs=1e-9)
    assert cond.prob(1) == pytest.approx(0.0975 / law.survival, rel=1e-12)
    assert 1 <= cond.mean < math.inf
    zero = PassageLaw(1.0, 1.0, np.zeros(3), 0.0, 0.0, 0)
    with pytest.raises(ZeroDivisionError):
        condition(zero)


# ---------------------------------------------------------------- horizon window

def test_window_degenerate_and_symmetric():
    prof = solve_alpha0(gauss_ref())
    n_u = 20 / prof.rho0
    assert horizon_window(prof, 20, b=0) == (round(n_u), round(n_u))
    for u, b in ((20, 1), (200, 5)):  # windows that are not clamped at 1
        n_u = u / prof.rho0
        n1, n2 = horizon_window(prof, u, b=b)
        assert n1 > 1
        assert abs((n2 - n_u) - (n_u - n1)) <= 1.0
    with pytest.raises(ValueError):
        horizon_window(prof, 1.0)


def test_window_holds_the_passage_mass():
    model = gauss_ref()
    prof = solve_alpha0(model)
    n1, n2 = horizon_window(prof, 20, b=5)
    law = passage_law(model, 20.0, n_max=n2)
    inside = law.probabilities[n1 - 1:n2].sum()
    assert law.survival - inside <= 0.05 * law.survival


# ---------------------------------------------------------------- lattice level mixing

@given(st.floats(0.3, 50), st.sampled_from([0.01, 0.02, 0.1]))
def test_level_mix_weights(u, h):
    mix = level_mix(u, h)
    assert sum(w for _, w in mix) == pytest.approx(1.0, abs=1e-12)
    for v, w in mix:
        assert v > 0 and w >= 0
        assert (v - u) / h == pytest.approx(round((v - u) / h), abs=1e-9)


def test_level_mix_on_grid_point():
    mix = level_mix(2.0, 0.01)
    assert mix == [(pytest.approx(1.99), 0.5), (2.0, 0.5)]


# ---------------------------------------------------------------- serialization

def test_passage_law_csv_round_trip():
    law = passage_law(latt_ref(), 2.5, n_max=12, h=1.0)
    text = law.to_csv()
    assert text.splitlines()[1] == "n,prob"
    back = PassageLaw.from_csv(text)
    np.testing.assert_array_equal(back.probabilities, law.probabilities)
    assert back.survival == law.survival and back.censored == law.censored
    buf = io.StringIO()
    law.to_csv(buf)
    assert buf.getvalue() == text
