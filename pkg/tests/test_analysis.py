import json
import math

import numpy as np
import pytest

from impulsive.analysis import Region, densify, density_gap, recurrent_proxy
from impulsive.errors import BudgetExhausted
from impulsive.fields import Polynomial, VectorFieldSpec
from impulsive.poincare import find_periodic_orbit, periodic_orbits_up_to

# slab of the S1a annulus around theta = pi, where every orbit is periodic
PI_SLAB = Region((-2.4, -0.2, -0.05), (-1.6, 0.2, 0.05), (1.6, 2.4))
# outer annulus slab: plain circles of period 2 pi, never meeting D
OUTER = Region((2.6, -0.3, -0.05), (2.9, 0.3, 0.05), (2.6, 2.9))
# inside the quarter skipped by the jump from theta = 0 to theta = pi / 2
SKIPPED = Region((1.3, 1.3, -0.05), (1.5, 1.5, 0.05))


def test_region_cells():
    C = Region((0, 0, 0), (1, 1, 0.1)).cells(0.1)
    assert C.shape == (100, 3)
    np.testing.assert_allclose(C[0], [0.05, 0.05, 0.05])
    assert all(1.6 <= np.hypot(*c[:2]) <= 2.4 for c in PI_SLAB.cells(0.1))
    assert Region.from_dict(json.loads(json.dumps(PI_SLAB.to_dict()))) == PI_SLAB


@pytest.fixture(scope="module")
def pi_proxy(s1a):
    return recurrent_proxy(s1a, PI_SLAB, 0.1, 1.0, 20.0)


def test_proxy_all_marked_on_periodic_slab(pi_proxy):
    assert len(pi_proxy.active) == len(PI_SLAB.cells(0.1))


def test_proxy_outer_circles(s1a):
    px = recurrent_proxy(s1a, OUTER, 0.1, 1.0, 20.0)
    assert len(px.active) == len(OUTER.cells(0.1)) > 0


def test_proxy_skipped_quarter_is_wandering(s1a):
    px = recurrent_proxy(s1a, SKIPPED, 0.1, 1.0, 20.0)
    assert len(px.active) == 0


def test_proxy_no_recurrence(s1a):
    drift = s1a.with_field(VectorFieldSpec.polynomial(Polynomial.constant((0.0, 0.0, 1.0))))
    px = recurrent_proxy(drift, Region((-1.0, -2.2, -0.5), (-0.8, -2.0, -0.3)), 0.1, 1.0, 5.0)
    assert len(px.active) == 0


def test_proxy_monotone_in_horizon(s1a):
    short = recurrent_proxy(s1a, PI_SLAB, 0.1, 1.0, 4.0)
    assert len(short.active) == 0  # the shortest return takes 3 pi / 2
    longer = recurrent_proxy(s1a, PI_SLAB, 0.1, 1.0, 5.0)
    assert set(map(tuple, short.active)) <= set(map(tuple, longer.active))


def test_proxy_csv(pi_proxy, tmp_path):
    p = tmp_path / "proxy.csv"
    pi_proxy.to_csv(p)
    head = p.read_text().splitlines()[0]
    assert "marked" in head and "flagged" in head


def test_density_gap(s1a, pi_proxy):
    orbs = periodic_orbits_up_to(s1a, 5.0, grid_resolution=11)
    assert density_gap(orbs, pi_proxy, s1a) <= 0.1
    assert density_gap([], pi_proxy, s1a) == math.inf
    empty = recurrent_proxy(s1a, SKIPPED, 0.1, 1.0, 20.0)
    assert density_gap(orbs, empty, s1a) == 0.0


def test_density_gap_proxy_soundness(s1a, pi_proxy):
    # the proxy marks every cell crossed by a verified periodic orbit
    orb = find_periodic_orbit(s1a, [0.0, 2.0, 0.0])
    assert density_gap([orb], pi_proxy, s1a) <= 0.45


def test_densify_already_dense(s1a):
    # just downstream of D_hat, so impulse mode sees the cells too
    px = recurrent_proxy(s1a, Region((-0.4, 1.6, -0.05), (0.0, 2.4, 0.05)), 0.1, 1.0, 20.0)
    orbs = periodic_orbits_up_to(s1a, 5.0, grid_resolution=11)
    for mode in ("impulse", "field"):
        _, rep, _ = densify(s1a, mode, 0.1, 5, proxy=px, orbits=orbs)
        assert rep.iterations == 0 and rep.status == "converged"
        assert rep.proxy["active"] > 0
        assert rep.final_gap <= 0.1


def test_densify_zero_budget(s2):
    px = recurrent_proxy(s2, Region((0.5, 0.2, 0.2), (0.55, 0.3, 0.3)), 0.05, 1.0, 50.0)
    assert len(px.active)
    with pytest.raises(BudgetExhausted) as info:
        densify(s2, "impulse", 0.1, 0, proxy=px)
    assert info.value.report.final_gap == math.inf
