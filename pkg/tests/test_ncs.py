import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdap.errors import ConfigError, DimensionError, DomainError
from hdap.model_space import X_MAX
from hdap.search.ncs import NcsConfig, bhattacharyya, ncs_minimize

CENTER = np.array([0.3, 0.5, 0.2, 0.7, 0.4])


def sphere(x):
    return float(np.sum((x - CENTER) ** 2))


def test_bhattacharyya_examples():
    assert bhattacharyya([0.0], 1.0, [1.0], 1.0) == pytest.approx(0.125)
    assert bhattacharyya([0.2, 0.4], 0.3, [0.2, 0.4], 0.3) == 0.0
    # unequal spreads, same means: 0.5 * d * log(s / (s1 s2))
    s = 0.5 * (1.0 + 4.0)
    assert bhattacharyya([0.0], 1.0, [0.0], 2.0) == pytest.approx(0.5 * np.log(s / 2.0))
    with pytest.raises(DomainError):
        bhattacharyya([0.0], 0.0, [1.0], 1.0)
    with pytest.raises(DimensionError):
        bhattacharyya([0.0], 1.0, [1.0, 2.0], 1.0)


finite = st.floats(-5, 5)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3),
       st.floats(0.01, 3), st.floats(0.01, 3))
def test_bhattacharyya_symmetric_nonnegative(m1, m2, s1, s2):
    d = bhattacharyya(m1, s1, m2, s2)
    assert d >= 0.0
    assert d == pytest.approx(bhattacharyya(m2, s2, m1, s1), rel=1e-12, abs=1e-15)


def test_config_errors():
    for kw in ({"n": 0}, {"G": -1}, {"epoch": 0}, {"r": 1.0}, {"r": 0.0}, {"sigma0": 0.0}):
        with pytest.raises(ConfigError):
            NcsConfig(**kw)
    with pytest.raises(DomainError):
        ncs_minimize(sphere, 5, NcsConfig(G=1), upper=1.2)
    with pytest.raises(DimensionError):
        ncs_minimize(sphere, 0, NcsConfig(G=1))


@pytest.mark.parametrize("n,G", [(1, 0), (4, 0), (3, 7), (10, 20)])
def test_evaluation_count(n, G):
    calls = []
    res = ncs_minimize(lambda x: calls.append(1) or sphere(x), 5, NcsConfig(n=n, G=G))
    assert len(calls) == res.n_evaluations == n * (G + 1) == len(res.trace)


def test_best_is_minimum_of_trace_and_bounds_hold():
    upper = np.array([0.1, 0.95, 0.5, 0.3, 0.0])
    res = ncs_minimize(sphere, 5, NcsConfig(n=6, G=30, seed=2), upper=upper)
    xs = np.stack([row.x for row in res.trace])
    assert np.all(xs >= 0) and np.all(xs <= upper)
    assert res.best_fitness == min(row.fitness for row in res.trace)
    assert sphere(res.best_x) == res.best_fitness


def test_first_individual_starts_at_zero():
    res = ncs_minimize(sphere, 5, NcsConfig(n=3, G=2))
    assert np.array_equal(res.trace[0].x, np.zeros(5))


def test_deterministic():
    a = ncs_minimize(sphere, 5, NcsConfig(n=5, G=25, seed=9))
    b = ncs_minimize(sphere, 5, NcsConfig(n=5, G=25, seed=9))
    assert np.array_equal(a.best_x, b.best_x)
    assert [r.fitness for r in a.trace] == [r.fitness for r in b.trace]
    c = ncs_minimize(sphere, 5, NcsConfig(n=5, G=25, seed=10))
    assert [r.fitness for r in a.trace] != [r.fitness for r in c.trace]


def test_info_objects_are_kept():
    class Ev:
        def __init__(self, f):
            self.fitness = f

    res = ncs_minimize(lambda x: Ev(sphere(x)), 5, NcsConfig(n=2, G=3))
    assert all(isinstance(row.info, Ev) for row in res.trace)
    assert res.best_info.fitness == res.best_fitness


@pytest.mark.parametrize("seed", range(3))
def test_sphere_converges(seed):
    res = ncs_minimize(sphere, 5, NcsConfig(n=10, G=200, seed=seed))
    assert res.best_fitness <= 1e-2


def test_decreasing_objective_reaches_corner():
    res = ncs_minimize(lambda x: -float(np.sum(x)), 4, NcsConfig(n=10, G=150, seed=0))
    assert np.all(res.best_x >= X_MAX - 0.05)


def test_single_process_is_hill_climber():
    res = ncs_minimize(sphere, 5, NcsConfig(n=1, G=100, seed=1))
    accepted = [r.fitness for r in res.trace if r.accepted]
    assert all(b < a for a, b in zip(accepted, accepted[1:]))
    assert res.best_fitness < sphere(np.zeros(5))


def test_zero_box_stays_at_origin():
    res = ncs_minimize(sphere, 5, NcsConfig(n=3, G=5), upper=0.0)
    assert all(np.array_equal(r.x, np.zeros(5)) for r in res.trace)
