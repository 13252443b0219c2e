import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulsive.errors import DimensionUnsupported, FixedPointOnBoundary
from impulsive.index import fixed_point_index, index_of_orbit, index_stability_margin, locate_fixed_point, winding_number
from impulsive.poincare import find_periodic_orbit


def contraction(p):
    return np.asarray(p) / 2


def saddle(p):
    return np.array([2 * p[0], p[1] / 2])


def translation(p):
    return np.asarray(p) + np.array([10.0, 0.0])


def shifted(p):
    return np.array([p[0] / 2 + 0.3, p[1] / 2])


O = np.zeros(2)


def test_index_examples():
    assert fixed_point_index(contraction, O, 1.0).index == 1
    assert fixed_point_index(saddle, O, 1.0).index == -1
    r = fixed_point_index(translation, O, 1.0)
    assert r.index == 0 and r.case == "disjoint"


def test_margins():
    assert index_stability_margin(contraction, O, 1.0, 256) == pytest.approx(0.5, rel=1e-3)
    assert index_stability_margin(saddle, O, 1.0, 256) == pytest.approx(0.5, rel=1e-3)
    assert index_stability_margin(translation, O, 1.0) >= 9


def test_rotation_winding():
    # f(x) - x = (R - I)x winds once for a rotation by a non-zero angle
    c, s = np.cos(1.0), np.sin(1.0)
    R = np.array([[c, -s], [s, c]])
    assert fixed_point_index(lambda p: R @ p, O, 1.0).index == 1


def test_degree_two_map():
    # f(z) - z = z^2 in complex notation has winding 2
    def f(p):
        z = complex(*p)
        w = z + z * z
        return np.array([w.real, w.imag])

    assert fixed_point_index(f, O, 0.5).index == 2


@pytest.mark.parametrize("f,expect", [(contraction, (0, 0)), (saddle, (0, 0)), (shifted, (0.6, 0))])
def test_locate(f, expect):
    p = locate_fixed_point(f, O, 1.0)
    assert np.linalg.norm(f(p) - p) <= 1e-6
    np.testing.assert_allclose(p, expect, atol=1e-5)


def test_errors():
    with pytest.raises(FixedPointOnBoundary):
        fixed_point_index(lambda p: np.asarray(p), O, 1.0)
    with pytest.raises(DimensionUnsupported):
        fixed_point_index(contraction, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        fixed_point_index(contraction, O, 0.0)


def test_identity_family_has_no_index(s1a):
    orb = find_periodic_orbit(s1a, [0.0, 2.0, 0.0])
    with pytest.raises(FixedPointOnBoundary):
        index_of_orbit(s1a, orb, 0.05)


def test_orbit_index_unsupported_on_sphere(s3):
    from impulsive.poincare import PeriodicOrbit

    orb = PeriodicOrbit(np.array([1.0, 0.0, 0.0]), 1.0, 1, 0.0)
    with pytest.raises(DimensionUnsupported):
        index_of_orbit(s3, orb, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-3.1, 3.1), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_contractions_have_index_one(a, b, th, px, py):
    # (P1): a linear contraction with a fixed point inside the disk
    c, s = np.cos(th), np.sin(th)
    A = np.array([[c, -s], [s, c]]) @ np.diag([a, b])
    p0 = np.array([px, py])

    def f(p):
        return p0 + A @ (np.asarray(p) - p0)

    assert fixed_point_index(f, O, 1.0).index == 1
    p = locate_fixed_point(f, O, 1.0)
    assert np.linalg.norm(f(p) - p) <= 1e-6


@pytest.mark.parametrize("f", [contraction, saddle, translation])
def test_stability_under_perturbation(f, rng):
    # (P2): perturbations below half the boundary margin keep the index
    base = fixed_point_index(f, O, 1.0, 64)
    m = base.margin
    for _ in range(20):
        k = rng.normal(size=(3, 2))
        ph = rng.uniform(0, 2 * np.pi, size=3)

        def g(p, k=k, ph=ph):
            wave = np.array([np.sin(3 * p[0] + ph[0]) * k[0, 0] + np.cos(5 * p[1] + ph[1]) * k[1, 0],
                             np.sin(4 * p[1] + ph[2]) * k[2, 1] + np.cos(2 * p[0]) * k[0, 1]])
            wave = wave / (np.linalg.norm(k) * 2 + 1e-12)
            return f(p) + 0.49 * m * wave

        assert fixed_point_index(g, O, 1.0, 64).index == base.index


def test_winding_refines_fast_rotation():
    # f(x) - x spins 3 times along the circle; coarse sampling must be refined
    def f(p):
        th = np.arctan2(p[1], p[0])
        return np.asarray(p) + np.array([np.cos(3 * th), np.sin(3 * th)])

    def curve(s):
        return np.array([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)])

    w, total, margin, n = winding_number(f, curve, n0=4)
    assert w == 3
    assert total == pytest.approx(6 * np.pi)
