import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inertial_spin.errors import HypothesisViolation, NoDecayRateError
from inertial_spin.gronwall import (Gron1Problem, Gron2Problem, bound_table, exponential_forcing, gron1_bound,
                                    gron1_uniform_bound, gron2_bound, gron2_rate, gron2_uniform_bound,
                                    gronwall_suite, integro_ode_oracle, mu_star, problem_from_spec, t_kernels)


def max_gap(problem, bound, t_end=10.0):
    oracle = integro_ode_oracle(problem, t_end, 201)
    return float(np.max(np.abs(np.array([bound(problem, t) for t in oracle.t]) - oracle.y)))


@pytest.mark.parametrize("a, b, c", [(1.0, 3.0, 2.0), (1.0, 2.0, 1.0), (2.0, 6.0, 4.0)])
def test_gron1_bound_is_exact_for_the_equality(a, b, c):
    problem = Gron1Problem(a=a, b=b, c=c, y0=1.0, y1=0.3)
    assert max_gap(problem, gron1_bound) <= 1e-10


def test_gron1_distinct_roots_closed_form():
    problem = Gron1Problem(a=1.0, b=3.0, c=2.0, y0=1.0, y1=0.0)
    assert (problem.nu1, problem.nu2) == (2.0, 1.0)
    t = 1.5
    assert gron1_bound(problem, t) == pytest.approx(2 * math.exp(-t) - math.exp(-2 * t), abs=1e-15)


def test_gron1_forced_equality_matches_oracle():
    problem = Gron1Problem(a=1.0, b=3.0, c=2.0, y0=0.5, y1=0.0, g=exponential_forcing(1.0, 0.5), g_integral=2.0)
    assert max_gap(problem, gron1_bound) <= 1e-9


def test_gron1_uniform_bounds():
    repeated = Gron1Problem(a=1.0, b=2.0, c=1.0, y0=1.0, y1=0.0)
    assert gron1_uniform_bound(repeated, sharp=True) == pytest.approx(1.0)
    assert gron1_uniform_bound(repeated) == pytest.approx(3.0 / math.e)
    distinct = Gron1Problem(a=1.0, b=3.0, c=2.0, y0=1.0, y1=0.0)
    assert gron1_uniform_bound(distinct) == pytest.approx(3.0)
    falling = Gron1Problem(a=1.0, b=2.0, c=1.0, y0=1.0, y1=-0.5, g=exponential_forcing(2.0, 1.0), g_integral=2.0)
    assert gron1_uniform_bound(falling) == pytest.approx(2.0)


def test_gron1_hypotheses():
    with pytest.raises(HypothesisViolation):
        Gron1Problem(a=0.0, b=1.0, c=1.0, y0=1.0, y1=0.0)
    with pytest.raises(HypothesisViolation):
        Gron1Problem(a=1.0, b=1.0, c=1.0, y0=-1.0, y1=0.0)
    with pytest.raises(HypothesisViolation):
        gron1_uniform_bound(Gron1Problem(a=1.0, b=0.0, c=-1.0, y0=1.0, y1=0.0))
    with pytest.raises(ValueError):
        gron1_bound(Gron1Problem(a=1.0, b=2.0, c=1.0, y0=1.0, y1=0.0), -1.0)


def test_forcing_integral_by_quadrature():
    problem = Gron1Problem(a=1.0, b=2.0, c=1.0, y0=0.0, y1=0.0, g=exponential_forcing(3.0, 2.0))
    assert problem.forcing_integral() == pytest.approx(1.5, rel=1e-9)


def test_t_kernels_vanish():
    g = exponential_forcing(1.0, 1.0)
    t1, t2 = t_kernels(g, 2.0, 1.0, 3.0, 1.0, 30.0)
    assert 0.0 <= t1 < 1e-6
    assert 0.0 <= t2 < 1e-6
    assert t_kernels(g, 2.0, 1.0, 3.0, 1.0, 0.0) == (0.0, 0.0)
    with pytest.raises(HypothesisViolation):
        t_kernels(g, 1.0, 2.0, 3.0, 1.0, 1.0)


def test_mu_star_closed_form():
    problem = Gron2Problem(a=2.0, b=1.0, c=0.25, d=0.0, nu=1.0, y0=1.0, y1=0.0)
    result = mu_star(problem)
    assert result.d_star == pytest.approx(0.75)
    assert result.mu_star == pytest.approx(1.0 - 0.25 ** (1.0 / 3.0), abs=1e-9)


def test_mu_star_empty_without_dissipation_margin():
    problem = Gron2Problem(a=1.0, b=1.0, c=2.0, d=0.0, nu=1.0, y0=1.0, y1=0.0)
    assert mu_star(problem).empty
    with pytest.raises(NoDecayRateError):
        gron2_rate(problem)


def test_double_rate_branch():
    problem = Gron2Problem(a=1.0, b=1.0, c=0.5, d=0.3, nu=2.0, y0=1.0, y1=0.2)
    rate = gron2_rate(problem)
    assert rate.branch == "double" and rate.mu == 0.5
    oracle = integro_ode_oracle(problem, 20.0, 401)
    bound = np.array([gron2_bound(problem, t, rate) for t in oracle.t])
    assert np.min(bound - oracle.y) >= -1e-8


def test_open_endpoint_rate_is_shrunk():
    problem = Gron2Problem(a=3.0, b=4.0, c=0.0, d=0.5, nu=1.0, y0=1.0, y1=0.0)
    assert mu_star(problem).mu_star == 1.0
    rate = gron2_rate(problem)
    assert rate.mu == pytest.approx(0.999)
    assert rate.note
    homogeneous = Gron2Problem(a=3.0, b=4.0, c=0.0, d=0.0, nu=1.0, y0=1.0, y1=0.0)
    assert gron2_rate(homogeneous).mu == 1.0


def test_gron2_uniform_bound():
    problem = Gron2Problem(a=2.0, b=1.0, c=0.25, d=0.5, nu=1.0, y0=1.0, y1=-0.4)
    assert gron2_uniform_bound(problem) == pytest.approx(1.0 + 0.2 + 0.25)
    with pytest.raises(HypothesisViolation):
        gron2_uniform_bound(Gron2Problem(a=1.0, b=1.0, c=1.0, d=0.0, nu=1.0, y0=1.0, y1=0.0))


def test_gron2_hypotheses():
    with pytest.raises(HypothesisViolation):
        Gron2Problem(a=1.0, b=1.0, c=0.0, d=0.0, nu=0.0, y0=1.0, y1=0.0)
    with pytest.raises(HypothesisViolation):
        Gron2Problem(a=1.0, b=1.0, c=-0.1, d=0.0, nu=1.0, y0=1.0, y1=0.0)


def test_oracle_tracks_memory_term():
    problem = Gron2Problem(a=2.0, b=1.0, c=0.25, d=0.0, nu=1.0, y0=1.0, y1=0.0)
    oracle = integro_ode_oracle(problem, 5.0, 51)
    assert oracle.z[0] == 0.0
    assert list(oracle.frame().columns) == ["t", "y", "ydot", "z"]


def test_suite_bounds_dominate():
    table = gronwall_suite(n_problems=8, seed=3, t_end=10.0, n_samples=201)
    assert len(table) == 16
    checked = table[table["nonnegative"]]
    assert len(checked) > 0
    assert checked["dominated"].all()
    assert checked["uniform_dominates"].all()


def test_suite_is_reproducible():
    first = gronwall_suite(n_problems=3, seed=5, t_end=5.0, n_samples=51)
    second = gronwall_suite(n_problems=3, seed=5, t_end=5.0, n_samples=51)
    assert first.equals(second)


def test_rate_exists_exactly_when_d_star_positive():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        a, b, nu = rng.uniform(0.1, 3.0, 3)
        c = rng.uniform(0.0, 2.0) * b * nu
        problem = Gron2Problem(a=a, b=b, c=c, d=0.0, nu=nu, y0=1.0, y1=0.0)
        assert mu_star(problem).empty == (problem.d_star <= 0)


@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.0, 0.95), st.floats(0.2, 3.0))
@settings(max_examples=40, deadline=None)
def test_mu_star_is_a_boundary_of_the_feasible_set(a, b, ratio, nu):
    problem = Gron2Problem(a=a, b=b, c=ratio * b * nu, d=0.0, nu=nu, y0=1.0, y1=0.0)
    result = mu_star(problem)
    assert not result.empty
    assert 0.0 < result.mu_star <= result.upper
    if result.mu_star < result.upper:
        assert abs(problem.cubic(result.mu_star)) <= 1e-9


def test_problem_from_spec():
    forced = problem_from_spec({"kind": "gron1", "a": 1, "b": 3, "c": 2, "y0": 1, "y1": 0,
                                "forcing": {"amplitude": 2.0, "rate": 4.0}})
    assert isinstance(forced, Gron1Problem)
    assert forced.forcing_integral() == 0.5
    assert forced.g(0.0) == 2.0
    plain = problem_from_spec({"a": 1, "b": 2, "c": 1, "y0": 1, "y1": 0})
    assert plain.forcing_integral() == 0.0
    memory = problem_from_spec({"kind": "gron2", "a": 2, "b": 1, "c": 0.25, "d": 0, "nu": 1, "y0": 1, "y1": 0})
    assert isinstance(memory, Gron2Problem)
    with pytest.raises(ValueError):
        problem_from_spec({"kind": "gron3"})


def test_bound_table():
    problem = Gron1Problem(a=1.0, b=2.0, c=1.0, y0=1.0, y1=0.0)
    table = bound_table(problem, [0.0, 1.0, 2.0])
    assert list(table.columns) == ["t", "bound", "uniform_bound"]
    assert table["bound"].iloc[0] == 1.0
    assert table["bound"].iloc[1] == pytest.approx(2 * math.exp(-1.0))
