import json

import numpy as np
import pytest

from impulsive.errors import DimensionUnsupported, OutsidePatch
from impulsive.fields import Polynomial, PolynomialTerm
from impulsive.geometry import Bump, SectionPatch
from impulsive.index import index_of_orbit
from impulsive.integrate import c0_distance_fields, flow
from impulsive.perturbation import (
    PerturbationRecord,
    attractify,
    attractify_impulse,
    c0_distance_impulses,
    closing_field,
    closing_impulse,
    contraction_ratio,
    permanence_test,
)
from impulsive.poincare import find_periodic_orbit, poincare_hat
from impulsive.semiflow import impulsive_trajectory

TARGET = np.array([0.5, 0.25, 0.25])


@pytest.fixture(scope="module")
def s2_closed(s2):
    return closing_impulse(s2, TARGET, 0.05)


@pytest.fixture(scope="module")
def s1a_orbit(s1a):
    return find_periodic_orbit(s1a, [0.0, 2.0, 0.0])


def test_c0_distance_impulses(s2):
    I = s2.impulse
    assert c0_distance_impulses(I, I) == 0.0
    J = I.then(Bump((0.25, 0.25), 0.1, "shift", (0.02, -0.01)))
    assert c0_distance_impulses(I, J) == pytest.approx(np.hypot(0.02, 0.01), rel=1e-9)


def test_closing_impulse_s2(s2, s2_closed):
    r = s2_closed
    # frozen regression oracle: least return within eps/2 and its distance
    assert r.n == 4
    assert r.distance == pytest.approx(0.022264041779, abs=1e-9)
    assert r.record.c0_size < 0.05
    assert c0_distance_impulses(s2.impulse, r.impulse) == pytest.approx(r.record.c0_size, rel=1e-6)
    assert s2.space.distance(r.orbit.representative, TARGET) < 0.05
    assert r.orbit.k == 4 and r.orbit.residual <= s2.tolerances.periodic
    # the bumps fix the intermediate landings
    for q in r.orbit.crossings[1:]:
        x = s2.impulse.inverse(q)
        assert s2.space.distance(r.impulse.apply(x), q) <= 1e-12
    again = find_periodic_orbit(r.system, r.orbit.representative, k=r.n)
    assert again.residual <= s2.tolerances.periodic


def test_closing_impulse_deterministic(s2, s2_closed):
    other = closing_impulse(s2, TARGET, 0.05)
    assert json.dumps(other.record.to_dict()) == json.dumps(s2_closed.record.to_dict())


def test_closing_impulse_trivial_and_errors(s1a, s3):
    r = closing_impulse(s1a, np.array([0.0, 2.0, 0.0]), 0.05)
    assert r.record.c0_size == 0.0 and r.impulse.bumps == ()
    with pytest.raises(ValueError):
        closing_impulse(s1a, np.array([0.0, 2.0, 0.0]), 5.0)
    with pytest.raises(OutsidePatch):
        closing_impulse(s1a, np.array([0.0, 0.9, 0.0]), 0.05)
    with pytest.raises(DimensionUnsupported):
        closing_impulse(s3, s3.D_hat.grid(3)[1], 0.05)


def test_closing_field_s2(s2):
    p = flow(s2.field, s2.space, TARGET, 0.3)
    r = closing_field(s2, p, 0.05)
    assert r.record.c0_size < 0.05
    assert s2.space.distance(r.orbit.representative, p) < 0.05
    assert r.orbit.residual <= s2.tolerances.periodic
    Y = r.field
    # support is away from both patches
    for sec in (s2.D, s2.D_hat):
        pts = np.array([sec.from_chart(u) for u in sec.chart_grid(15, 0.0)])
        assert np.array_equal(Y(pts), s2.field(pts))
    # trajectories far from the tube agree with the unperturbed flow
    q = np.array([0.5, 0.12, 0.38])
    far = impulsive_trajectory(r.system, q, 3.0)
    base = impulsive_trajectory(s2, q, 3.0)
    ts = np.linspace(0, 3.0, 13)
    if min(np.min(s2.space.distance(far.evaluate_many(ts), r.orbit.representative)), 1.0) > 0.3:
        assert np.max(s2.space.distance(far.evaluate_many(ts), base.evaluate_many(ts))) <= 1e-8


def test_closing_field_trivial_and_errors(s1a):
    r = closing_field(s1a, np.array([-2.0, 0.0, 0.0]), 0.05)
    assert r.record.kind == "identity" and r.record.c0_size == 0.0
    with pytest.raises(ValueError):
        closing_field(s1a, np.array([0.0, 0.0, 0.0]), 0.05)


def test_attractify_s1a(s1a, s1a_orbit):
    new, rec, orb, ratio = attractify(s1a, s1a_orbit, 0.2)
    assert ratio <= 0.9
    assert rec.c0_size <= rec.bound * (1 + 1e-9)
    assert c0_distance_fields(s1a.field, new.field, s1a.space, 256) <= rec.c0_size * (1 + 1e-9)
    assert index_of_orbit(new, orb, 0.02) == 1


def test_attractify_zero_eta(s1a, s1a_orbit):
    new, rec, orb, ratio = attractify(s1a, s1a_orbit, 0.0)
    assert new.field == s1a.field
    assert ratio == pytest.approx(1.0, abs=1e-5)


def test_attractify_impulse_s1a(s1a, s1a_orbit):
    new, rec, orb, ratio = attractify_impulse(s1a, s1a_orbit, 0.1)
    assert ratio <= 0.9
    assert c0_distance_impulses(s1a.impulse, new.impulse) <= 0.1 * (1 + 1e-9)
    same, _, _, r0 = attractify_impulse(s1a, s1a_orbit, 0.0)
    assert same.impulse == s1a.impulse
    assert r0 == pytest.approx(1.0, abs=1e-5)


def test_attractify_impulse_s2(s2, s2_closed):
    new, rec, orb, ratio = attractify_impulse(s2_closed.system, s2_closed.orbit, 0.02)
    assert ratio <= 0.95
    assert rec.c0_size <= 0.02
    assert contraction_ratio(new, orb) == pytest.approx(ratio, rel=1e-6)
    # the next return of a long flight passes near D's edge, so the disk stays small
    assert index_of_orbit(new, orb, 0.003) == 1


def test_permanence_plain_circle(s1b):
    sigma = SectionPatch.plane((0, 0, 0), [[0, 1, 0], [0, 0, 1]], (0.5, -0.4), (1.4, 0.4))
    orb = find_periodic_orbit(s1b, [0.0, 1.0, 0.0], section=sigma)
    assert orb.k == 0 and orb.period == pytest.approx(2 * np.pi, abs=1e-7)
    rep = permanence_test(s1b, orb, 0.05, trials=5, mode="impulse")
    assert rep.survivals == rep.trials == 5
    assert rep.worst_displacement == 0.0


def test_permanence_seeded(s1b):
    sigma = SectionPatch.plane((0, 0, 0), [[0, 1, 0], [0, 0, 1]], (0.5, -0.4), (1.4, 0.4))
    orb = find_periodic_orbit(s1b, [0.0, 1.0, 0.0], section=sigma)
    a = permanence_test(s1b, orb, 0.05, trials=3, mode="impulse", seed=3)
    b = permanence_test(s1b, orb, 0.05, trials=3, mode="impulse", seed=3)
    assert a == b and a.survivals <= a.trials


def test_record_round_trip(s2_closed):
    rec = s2_closed.record
    d = json.loads(json.dumps(rec.to_dict()))
    assert PerturbationRecord.from_dict(d).to_dict() == rec.to_dict()


def test_damping_term_is_polynomial(s1a):
    # a radial damping term is an exact polynomial addition
    damp = PolynomialTerm(Polynomial(((((1, 0, 0), -0.01),), (((0, 1, 0), -0.01),), ())))
    Y = s1a.field.with_terms(damp)
    x = np.array([[2.0, 0.0, 0.1]])
    np.testing.assert_allclose(Y(x) - s1a.field(x), [[-0.02, 0.0, 0.0]])


def test_closing_keeps_poincare_defined(s2_closed):
    q, t = poincare_hat(s2_closed.system, s2_closed.orbit.representative)
    assert t > 0
