import numpy as np
import pytest

from impulsive.errors import OrbitNotFound, OutsidePatch, PoincareUndefined
from impulsive.geometry import SectionPatch
from impulsive.poincare import (
    find_periodic_orbit,
    periodic_orbits_up_to,
    poincare_D,
    poincare_hat,
    return_map,
    same_orbit,
)
from impulsive.semiflow import impulsive_trajectory

# S1a: sigma is the half-plane theta = pi inside the annulus
SIGMA_PI = SectionPatch.plane((0, 0, 0), [[-1, 0, 0], [0, 0, 1]], (1.6, -0.4), (2.4, 0.4), name="sigma")


def test_poincare_hat_s1a_fixed(s1a):
    q, t = poincare_hat(s1a, [0.0, 2.0, 0.0])
    np.testing.assert_allclose(q, [0.0, 2.0, 0.0], atol=1e-7)
    assert t == pytest.approx(1.5 * np.pi, abs=1e-7)


def test_poincare_hat_domain(s1a):
    with pytest.raises(OutsidePatch):
        poincare_hat(s1a, [0.0, 0.9, 0.0])


def test_poincare_hat_s2(s2):
    q, t = poincare_hat(s2, [0.5, 0.2, 0.2])
    assert t == pytest.approx(3.5, abs=1e-7)
    np.testing.assert_allclose(q, [0.5, 0.14974746830583, 0.26217782649107], atol=1e-7)


def test_poincare_D_identity_on_s1a(s1a):
    for x in s1a.D.grid(4, inset=0.1):
        f, _ = poincare_D(s1a, x)
        np.testing.assert_allclose(f, x, atol=1e-7)


def test_poincare_D_s2(s2):
    x = np.array([0.0, 0.2, 0.2])
    f, t = poincare_D(s2, x)
    assert t == pytest.approx(3.5, abs=1e-7)
    np.testing.assert_allclose(f, [0.0, 0.14974746830583, 0.26217782649107], atol=1e-7)


def test_conjugacy(s2, rng):
    done = 0
    for u in rng.uniform(0.12, 0.38, size=(40, 2)):
        x = s2.D.from_chart(u)
        try:
            f, _ = poincare_D(s2, x)
            p, _ = poincare_hat(s2, s2.impulse.apply(x))
        except PoincareUndefined:
            continue
        assert s2.space.distance(s2.impulse.apply(f), p) <= 1e-7
        done += 1
    assert done >= 20


def test_return_map_s1a(s1a):
    x = np.array([-2.0, 0.0, 0.1])
    r = return_map(s1a, SIGMA_PI, x)
    np.testing.assert_allclose(r.point, x, atol=1e-7)
    assert r.time == pytest.approx(1.5 * np.pi, abs=1e-6)
    assert r.impulses == 1


def test_return_map_plain_circle(s1a):
    sigma = SectionPatch.plane((0, 0, 0), [[0, 1, 0], [0, 0, 1]], (0.5, -0.4), (1.4, 0.4))
    x = np.array([0.0, 0.9, 0.0])
    r = return_map(s1a, sigma, x)
    np.testing.assert_allclose(r.point, x, atol=1e-7)
    assert r.time == pytest.approx(2 * np.pi, abs=1e-6)
    assert r.impulses == 0


def test_return_map_composition(s2):
    sigma = s2.D_hat
    x = np.array([0.5, 0.2, 0.2])
    one = return_map(s2, sigma, x)
    two = return_map(s2, sigma, x, 2)
    again = return_map(s2, sigma, one.point)
    assert s2.space.distance(two.point, again.point) <= 1e-7
    with pytest.raises(ValueError):
        return_map(s2, sigma, x, 0)


def test_find_orbit_s1a(s1a):
    g = np.array([0.0, 2.1, 0.1])
    orb = find_periodic_orbit(s1a, g, k=1)
    np.testing.assert_allclose(orb.representative, g, atol=1e-7)
    assert orb.period == pytest.approx(1.5 * np.pi, abs=1e-6)
    assert orb.residual <= 1e-9
    # the closing impulse sits at t = T; run just past it and compare the landing
    tr = impulsive_trajectory(s1a, orb.representative, orb.period + 1e-6)
    assert tr.times[-1] == pytest.approx(orb.period, abs=1e-8)
    assert s1a.space.distance(tr.events[-1].post, orb.representative) <= max(10 * orb.residual, 1e-8)


def test_find_orbit_s2_not_found(s2):
    with pytest.raises((OrbitNotFound, OutsidePatch, PoincareUndefined)):
        find_periodic_orbit(s2, [0.5, 0.25, 0.25], k=1, budget=20)


def test_find_orbit_rejects_bad_input(s1a):
    with pytest.raises(ValueError):
        find_periodic_orbit(s1a, [0.0, 2.0, 0.0], k=0)
    with pytest.raises(OutsidePatch):
        find_periodic_orbit(s1a, [0.0, 0.9, 0.0])


def test_orbits_up_to_s1a(s1a):
    assert periodic_orbits_up_to(s1a, 4.0, grid_resolution=5) == []
    orbs = periodic_orbits_up_to(s1a, 5.0, grid_resolution=5)
    assert orbs and all(o.family for o in orbs)
    assert all(o.k == 1 and abs(o.period - 1.5 * np.pi) <= 1e-6 for o in orbs)
    with pytest.raises(ValueError):
        periodic_orbits_up_to(s1a, 0.0)


def test_orbits_up_to_s2_empty(s2):
    assert periodic_orbits_up_to(s2, 20.0, grid_resolution=20) == []


def test_orbit_inclusion(s1a):
    small = periodic_orbits_up_to(s1a, 5.0, grid_resolution=4)
    big = periodic_orbits_up_to(s1a, 10.0, grid_resolution=4)
    for a in small:
        assert any(same_orbit(a, b, s1a.space) for b in big)


def test_local_homeomorphism(s2, rng):
    # injectivity on sampled pairs of a small disk, and bounded expansion across scales
    c = np.array([0.2, 0.2])
    U = c + rng.uniform(-0.02, 0.02, size=(60, 2))
    img = []
    for u in U:
        q, _ = poincare_hat(s2, s2.D_hat.from_chart(u))
        img.append(s2.D_hat.to_chart(q))
    img = np.array(img)
    d_pre = np.linalg.norm(U[:, None] - U[None], axis=2)
    d_img = np.linalg.norm(img[:, None] - img[None], axis=2)
    off = ~np.eye(len(U), dtype=bool)
    assert np.all(d_img[off] > 0)
    ratio = d_img[off] / d_pre[off]
    assert ratio.max() <= 1 + 1e-6
