import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulsive.semiflow import impulsive_trajectory
from impulsive.shadowing import (
    NOT_SHADOWED,
    SHADOWED,
    PseudoOrbit,
    _reparam_dp,
    pseudo_orbit_eval,
    shadowing_falsifier,
    sphere_chain,
    true_orbit_chain,
)


@pytest.fixture(scope="module")
def chain(s3):
    return sphere_chain(s3, 0.05)


def test_paper_chain_is_pseudo_orbit(s3, chain):
    assert len(chain.points) == 2
    assert chain.gaps[0] < 0.05
    assert chain.times[1] == 1.0
    assert chain.sigma[0] == 0.0 and np.all(np.diff(chain.sigma) > 0)
    z = chain.points[0][2]
    assert 0 < z < 1 and abs(np.linalg.norm(chain.points[0]) - 1) <= 1e-12
    # the second point sits just past the equator, below D
    assert -0.01 < chain.points[1][2] < 0


def test_eval_at_breakpoints(s3, chain):
    for i, s in enumerate(chain.sigma[:-1]):
        np.testing.assert_allclose(pseudo_orbit_eval(chain, s3, s), chain.points[i], atol=1e-12)
    with pytest.raises(ValueError):
        pseudo_orbit_eval(chain, s3, chain.span + 1.0)


def test_eval_jumps_at_switch(s3, chain):
    # the first link ends short of D, the second starts past it without the impulse
    s1 = chain.sigma[1]
    before = pseudo_orbit_eval(chain, s3, s1 - 1e-9)
    after = pseudo_orbit_eval(chain, s3, s1 + 1e-9)
    assert np.linalg.norm(before - after) < 0.05
    true_after = impulsive_trajectory(s3, chain.points[0], s1 + 0.01).evaluate(s1 + 0.01)
    assert true_after[2] > 0.5  # the true orbit was thrown back up to D_hat


def test_single_link_is_trajectory(s1a):
    x = np.array([0.0, 2.0, 0.0])
    p = PseudoOrbit(s1a, [x], [6.0], 0.05, 6.0)
    tr = impulsive_trajectory(s1a, x, 6.0)
    for t in (0.0, 1.0, 4.0, 5.5):
        np.testing.assert_allclose(pseudo_orbit_eval(p, s1a, t), tr.evaluate(t), atol=1e-12)


def test_invalid_chains(s1a):
    with pytest.raises(ValueError):
        PseudoOrbit(s1a, [[0.0, 2.0, 0.0], [0.0, -2.0, 0.0]], [1.0, 1.0], 0.05, 2.0)
    with pytest.raises(ValueError):
        PseudoOrbit(s1a, [[0.0, 2.0, 0.0]], [0.5], 0.05, 2.0)


def test_true_chain_is_shadowed(s3):
    p = true_orbit_chain(s3, [0.6, 0.0, 0.8], [1.5, 1.0])
    v = shadowing_falsifier(s3, p, 0.1, init_grid=50, rep_slack_points=4, n_levels=7, n_time=120, refine_top=3)
    assert v.verdict == SHADOWED
    assert v.best_distance <= 1e-6


def test_paper_chain_not_shadowed_small_search(s3, chain):
    v = shadowing_falsifier(s3, chain, 0.1, init_grid=200, rep_slack_points=8, n_levels=11, n_time=200, refine_top=4)
    assert v.verdict == NOT_SHADOWED
    assert v.best_distance > 0.1
    assert v.values[0] == 0.0
    slopes = np.diff(v.values) / np.diff(v.knots)
    assert np.all(slopes >= 1 - 0.1 - 1e-12) and np.all(slopes <= 1 + 0.1 + 1e-12)


def test_huge_eps_is_trivially_shadowed(s3, chain):
    v = shadowing_falsifier(s3, chain, 3.0, init_grid=20, rep_slack_points=2, n_levels=3, n_time=50, refine_top=1)
    assert v.verdict == SHADOWED


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.3), st.integers(1, 6), st.integers(3, 9), st.floats(1.0, 5.0))
def test_reparametrizations_in_rep_eps(eps, n_knots, n_levels, span):
    # any zeta from the search starts at 0 and keeps its slopes in [1 - eps, 1 + eps]
    rng = np.random.default_rng(n_knots * 100 + n_levels)
    c = rng.uniform(-1, 1, size=3)

    def dist(ts, zs):
        return np.abs(np.sin(c[0] * zs + c[1]) - np.sin(c[2] * ts))

    t_grid = np.linspace(0, span, 60)
    best, knots, values = _reparam_dp(dist, span, eps, n_knots, n_levels, t_grid)
    assert values[0] == 0.0
    slopes = np.diff(values) / np.diff(knots)
    assert np.all(slopes >= 1 - eps - 1e-12) and np.all(slopes <= 1 + eps + 1e-12)
