"""Closing, attracting and permanence constructions for impulses and fields.

Impulse perturbations are bumps of the landing chart post-composed with the
impulse; field perturbations are tube or blob terms added to the field.
Every construction is verified after the fact by simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BumpCollision,
    ContractionNotAchieved,
    CrossingsTooClose,
    DimensionUnsupported,
    NoFreeSegment,
    NotRecurrent,
    OrbitNotFound,
    OutsidePatch,
    PoincareUndefined,
    TubeIntersectsSection,
    VerificationFailed,
)
from .fields import BlobTerm, Polynomial, PolynomialTerm, TubeTerm
from .geometry import Bump, Impulse, SectionPatch, set_distance
from .index import return_chart_map
from .integrate import c0_distance_fields, first_hit
from .poincare import PeriodicOrbit, find_periodic_orbit, poincare_hat, return_map
from .profiles import BUMP_SLOPE, PLATEAU_RADIAL_MAX, window_integral
from .semiflow import impulsive_trajectory
from .system import ImpulsiveSystem

__all__ = [
    "PerturbationRecord",
    "ClosingResult",
    "PermanenceReport",
    "c0_distance_impulses",
    "closing_impulse",
    "closing_field",
    "attractify",
    "attractify_impulse",
    "contraction_ratio",
    "contraction_margin",
    "permanence_delta",
    "permanence_test",
    "radial_damping_term",
    "random_impulse_bumps",
    "random_field_blobs",
]

SHIFT_LIPSCHITZ = 0.75


@dataclass(frozen=True)
class PerturbationRecord:
    """Provenance of one perturbation; ``payload`` holds the serialized bumps or terms."""

    mode: str
    kind: str
    c0_size: float
    bound: float
    support: dict = field(default_factory=dict)
    seed: int | None = None
    target: tuple | None = None
    params: dict = field(default_factory=dict)
    payload: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "kind": self.kind,
            "c0_size": self.c0_size,
            "bound": self.bound,
            "support": self.support,
            "seed": self.seed,
            "target": None if self.target is None else list(self.target),
            "params": self.params,
            "payload": list(self.payload),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationRecord":
        tgt = d.get("target")
        return cls(
            d["mode"],
            d["kind"],
            float(d["c0_size"]),
            float(d["bound"]),
            dict(d.get("support", {})),
            d.get("seed"),
            None if tgt is None else tuple(tgt),
            dict(d.get("params", {})),
            tuple(d.get("payload", ())),
        )


@dataclass
class ClosingResult:
    system: ImpulsiveSystem
    record: PerturbationRecord
    orbit: PeriodicOrbit
    n: int = 0
    distance: float = 0.0

    @property
    def impulse(self) -> Impulse:
        return self.system.impulse

    @property
    def field(self):
        return self.system.field


@dataclass(frozen=True)
class PermanenceReport:
    mode: str
    delta: float
    trials: int
    survivals: int
    worst_displacement: float
    seed: int
    survival_radius: float
    outcomes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "delta": self.delta,
            "trials": self.trials,
            "survivals": self.survivals,
            "worst_displacement": self.worst_displacement,
            "seed": self.seed,
            "survival_radius": self.survival_radius,
            "outcomes": list(self.outcomes),
        }


# -- C0 distances ------------------------------------------------------------------
def c0_distance_impulses(I: Impulse, J: Impulse, n_samples: int = 2500) -> float:
    """Sampled ``max |J(u) - I(u)|`` over ``D``'s chart, including bump preimages."""
    src = I.source
    n = max(2, int(np.ceil(n_samples ** (1.0 / src.chart_dim))))
    U = [src.chart_grid(n)]
    extra = []
    for bp in set(I.bumps) ^ set(J.bumps):
        u = I.base.chart_inverse(np.asarray(bp.center))
        extra.append(u)
    if extra:
        E = np.array(extra)
        U.append(E[src.in_rect(E)])
    U = np.vstack(U)
    diff = [np.linalg.norm(J.chart_apply(u) - I.chart_apply(u)) for u in U]
    return float(max(diff))


# -- closing: impulses -------------------------------------------------------------
def _seg_point_dist(a, b, P):
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return np.linalg.norm(P - a, axis=1)
    t = np.clip((P - a) @ ab / L2, 0.0, 1.0)
    return np.linalg.norm(P - (a + t[:, None] * ab), axis=1)


def _transport_bumps(start, end, obstacles, patch: SectionPatch, max_bumps: int = 4000):
    """Shift bumps carrying ``start`` to ``end`` while fixing every obstacle point.

    Tries the straight path and a few bent paths; returns ``(bumps, path_length)``.
    Each bump moves the current position by one chord of the path and has
    radius ``BUMP_SLOPE * chord / SHIFT_LIPSCHITZ`` so that it is injective.
    """
    start, end = np.asarray(start, float), np.asarray(end, float)
    d = end - start
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        return [], 0.0
    obstacles = np.zeros((0, len(start))) if obstacles is None or len(obstacles) == 0 else np.asarray(obstacles, float)
    perp = np.zeros_like(d)
    if len(d) >= 2:
        perp[0], perp[1] = -d[1], d[0]
        perp /= np.linalg.norm(perp)
    paths = [[start, end]]
    for off in (0.5, -0.5, 0.9, -0.9):
        paths.append([start, 0.5 * (start + end) + off * dist * perp, end])
    best_err = "path leaves the patch"
    for path in paths:
        segs = list(zip(path[:-1], path[1:]))
        length = float(sum(np.linalg.norm(b - a) for a, b in segs))
        clear = np.inf
        for a, b in segs:
            if len(obstacles):
                clear = min(clear, float(_seg_point_dist(a, b, obstacles).min()))
            for q in (a, b):
                clear = min(clear, patch.boundary_gap(q) - patch.margin)
        if not np.isfinite(clear):
            clear = 0.5 * patch.chart_size
        if clear <= 0.0:
            best_err = "no clearance along the path"
            continue
        R = 0.95 * clear
        chord = R * SHIFT_LIPSCHITZ / BUMP_SLOPE
        m = int(np.ceil(length / chord))
        if m > max_bumps:
            best_err = f"needs {m} bumps"
            continue
        # equally spaced points along the polyline
        cum = np.concatenate([[0.0], np.cumsum([np.linalg.norm(b - a) for a, b in segs])])
        s = np.linspace(0.0, length, m + 1)
        pts = []
        for si in s:
            j = min(np.searchsorted(cum, si, side="right") - 1, len(segs) - 1)
            a, b = segs[j]
            seg_len = cum[j + 1] - cum[j]
            t = 0.0 if seg_len == 0 else (si - cum[j]) / seg_len
            pts.append(a + t * (b - a))
        pts[-1] = end
        radius = BUMP_SLOPE * max(np.linalg.norm(pts[i + 1] - pts[i]) for i in range(m)) / SHIFT_LIPSCHITZ
        bumps = [
            Bump(tuple(pts[i]), float(radius), "shift", tuple(pts[i + 1] - pts[i])) for i in range(m)
        ]
        return bumps, length
    raise BumpCollision(best_err)


def closing_impulse(
    system: ImpulsiveSystem,
    p,
    eps: float,
    recurrence_budget: int = 400,
    protected=None,
    refine_tol: float | None = None,
    seed: int = 0,
) -> ClosingResult:
    """Perturb the impulse to ``J = zeta o I`` so that a point within ``eps`` of ``p`` is periodic.

    ``p`` lies on ``D_hat``. Starting from ``x = p`` (then a few nearby seeds)
    the Poincare map is iterated for the least ``n`` with
    ``|P^n(x) - x| < eps/2``; ``zeta`` is a chain of shift bumps carrying
    ``x_n`` to ``x`` that fixes ``x_1, ..., x_{n-1}`` and the ``protected``
    points, so ``x`` is a fixed point of the new ``P^n``.
    """
    Dh = system.D_hat
    if Dh.chart_dim < 2:
        raise DimensionUnsupported("impulse closing needs sections of dimension at least 2")
    if not 0.0 < eps < Dh.chart_size:
        raise ValueError(f"eps must lie in (0, {Dh.chart_size}) for this patch")
    p = np.asarray(p, dtype=float)
    if not Dh.contains(p, tol=max(Dh.tol, 1e-6)):
        raise OutsidePatch("closing target is not on the landing section")
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    u_p = Dh.to_chart(p)
    prot = np.zeros((0, Dh.chart_dim)) if protected is None or len(protected) == 0 else Dh.to_chart(np.asarray(protected))
    seeds = [u_p]
    r = eps / 8
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                seeds.append(u_p + r * np.array([dx, dy] + [0] * (Dh.chart_dim - 2)))
    last_err = "no near return"
    for u_x in seeds:
        if not Dh.is_interior(u_x):
            continue
        x = Dh.from_chart(u_x)
        orbit_pts = [u_x]
        y = x
        for n in range(1, recurrence_budget + 1):
            try:
                y, _ = poincare_hat(system, y)
            except PoincareUndefined as exc:
                last_err = str(exc)
                break
            u_y = Dh.to_chart(y)
            gap = float(np.linalg.norm(u_y - u_x))
            if gap <= tol:
                orb = find_periodic_orbit(system, x, n, tol)
                rec = PerturbationRecord("impulse", "identity", 0.0, 0.0, {}, seed, tuple(p), {"eps": eps, "n": n})
                return ClosingResult(system, rec, orb, n, 0.0)
            if gap < eps / 2:
                obstacles = np.vstack([np.array(orbit_pts[1:]).reshape(-1, Dh.chart_dim), prot])
                try:
                    bumps, length = _transport_bumps(u_y, u_x, obstacles, Dh)
                except BumpCollision as exc:
                    last_err = f"bump collision at n={n}: {exc}"
                    orbit_pts.append(u_y)
                    continue
                if length >= eps:
                    orbit_pts.append(u_y)
                    continue
                J = system.impulse.then(*bumps)
                c0 = c0_distance_impulses(system.impulse, J)
                rec = PerturbationRecord(
                    "impulse",
                    "closing",
                    c0,
                    length,
                    {"chart_points": [list(map(float, b.center)) for b in bumps[:1]], "radius": bumps[0].radius, "bumps": len(bumps)},
                    seed,
                    tuple(p),
                    {"eps": eps, "n": n, "gap": gap},
                    tuple(b.to_dict() for b in bumps),
                )
                new = system.with_impulse(J, rec)
                try:
                    orb = find_periodic_orbit(new, x, n, tol)
                except (OrbitNotFound, PoincareUndefined) as exc:
                    last_err = f"verification failed at n={n}: {exc}"
                    orbit_pts.append(u_y)
                    continue
                if float(system.space.distance(orb.representative, p)) >= eps:
                    orbit_pts.append(u_y)
                    continue
                return ClosingResult(new, rec, orb, n, gap)
            orbit_pts.append(u_y)
    raise NotRecurrent(f"no closable return within {recurrence_budget} iterates ({last_err})")


# -- closing: vector fields ----------------------------------------------------------
def _frame(v):
    v = np.asarray(v, float)
    n = v / np.linalg.norm(v)
    a = np.zeros_like(n)
    a[int(np.argmin(np.abs(n)))] = 1.0
    e1 = a - (a @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return n, e1, e2


def _unwrap(space, pts):
    pts = np.asarray(pts, dtype=float)
    if space.kind != "flat-torus":
        return pts
    steps = space.displacement(pts[:-1], pts[1:])
    return np.vstack([pts[:1], pts[0] + np.cumsum(steps, axis=0)])


def _axis(system, a, L, n=None):
    """Unwrapped plain-flow samples of ``phi_[0, L](a)``; None if an impulse occurs on the way."""
    hit = first_hit(system.field, system.space, a, [system.D], L, **system.integ_kwargs)
    if hit is not None:
        return None, None
    speed = float(np.linalg.norm(system.field(a)))
    n = n or max(50, int(np.ceil(L * speed / 0.005)))
    n = min(n, 2000)
    traj = impulsive_trajectory(replace(system, D=_never_section(system)), a, L)
    ts = np.linspace(0.0, L, n)
    return ts, _unwrap(system.space, traj.evaluate_many(ts))


def _never_section(system):
    # a degenerate stand-in for D that is never met, used to sample plain flow
    D = system.D
    return replace(D, lower=tuple(np.asarray(D.lower) + 1e6), upper=tuple(np.asarray(D.upper) + 1e6))


def _section_samples(system, n=31):
    return np.vstack([system.D.grid(n), system.D_hat.grid(n)])


def radial_damping_term(rate: float) -> PolynomialTerm:
    """``-rate * (x, y, 0)``: spirals the rotation's circles inward."""
    return PolynomialTerm(
        Polynomial(((((1, 0, 0), -float(rate)),), (((0, 1, 0), -float(rate)),), ())), label="radial-damping"
    )


def _choose_segment(system, a, tube_time, eps, prot, sec_pts):
    """Tube placement along the orbit of ``a`` with the most room for a return.

    Candidates are the segments just before ``a`` (preferred: the closed
    orbit then passes through ``a`` itself) and just after it, for a few
    lengths. Returns ``(start, L, ramp, W, times, axis, w_max)`` or None.
    """
    from .integrate import flow

    space = system.space
    best = None
    for L in tube_time * np.array([1.0, 0.5, 0.25, 0.125]):
        ramp = 0.1 * L
        W = window_integral(L, ramp)
        for s0 in (-L, 0.0):
            b = a if s0 == 0.0 else flow(system.field, space, a, s0, system.tolerances.integration, system.tolerances.max_step)
            ts, axis = _axis(system, b, L)
            if axis is None:
                continue
            spacing = float(np.max(np.linalg.norm(np.diff(axis, axis=0), axis=1)))
            room = set_distance(axis, sec_pts, space)
            if prot is not None:
                room = min(room, set_distance(axis, prot, space))
            w_max = min(0.9 * eps * W, (room - 2 * spacing) / 1.75)
            if w_max > 0 and (best is None or w_max > best[-1] * 1.5):
                best = (s0, L, ramp, W, ts, axis, w_max)
    return best


def closing_field(
    system: ImpulsiveSystem,
    p,
    eps: float,
    protected=None,
    max_time: float | None = None,
    tube_time: float = 1.0,
    refine_tol: float | None = None,
    seed: int = 0,
    singularity_floor: float = 1e-3,
) -> ClosingResult:
    """Add a tube push so that an orbit within ``eps`` of ``p`` closes up.

    The impulsive orbit of ``p`` is followed to a return ``p + w`` on the
    transversal disk at ``p`` with ``|w| <= 0.9 eps * W`` (``W`` the window
    integral of the tube). A tube around a flow segment next to ``p`` pushes
    the returning stream by ``-w``; the push vector is then corrected by
    fixed-point iteration until the perturbed return map has an exact fixed
    point, which :func:`find_periodic_orbit` certifies. The tube stays away
    from ``D``, ``D_hat`` and the ``protected`` points (other orbits).
    """
    X, space = system.field, system.space
    if space.coord_dim != 3:
        raise DimensionUnsupported("field closing is implemented for 3-dimensional ambient spaces")
    p = np.asarray(p, dtype=float)
    if np.linalg.norm(X(p)) < singularity_floor:
        raise ValueError("closing target is too close to a singularity")
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    a = p
    for _ in range(50):
        if not (system.D.contains(a, tol=1e-3) or system.D_hat.contains(a, tol=1e-3)):
            break
        a = _flow_back(system, a, 0.01)
    horizon = max(system.horizon, 5000.0) if max_time is None else max_time
    prot = None if protected is None or len(protected) == 0 else np.asarray(protected, dtype=float)
    seg = _choose_segment(system, a, tube_time, eps, prot, _section_samples(system))
    if seg is None:
        raise TubeIntersectsSection("every tube segment near the target meets D, D_hat or a protected orbit")
    w_max = seg[-1]

    _, e1, e2 = _frame(X(a))
    # returns are watched on a larger disk: a usable return must be much closer than all earlier ones,
    # so that no earlier pass of the orbit meets the tube
    r_watch = 1.9 * w_max
    sigma = SectionPatch.plane(a, [e1, e2], (-r_watch, -r_watch), (r_watch, r_watch), periods=space.periods, name="sigma")
    t_total, p_cur, burn = 0.0, a, 0.0
    closest = np.inf
    last = "no return"
    while t_total < horizon:
        hit = first_hit(
            X, space, p_cur, [sigma, system.D], horizon - t_total, burn_in=burn, directions=[1, 0], **system.integ_kwargs
        )
        if hit is None:
            break
        t_total += hit.time
        if hit.section_index == 1:
            p_cur, burn = system.impulse.apply(hit.point), [0.0, system.burn_in]
            continue
        p_cur, burn = hit.point, 0.0
        w = hit.chart
        r = float(np.linalg.norm(w))
        usable = t_total > 2 * seg[1] and r <= w_max and 1.7 * r < closest
        closest = min(closest, r)
        if not usable:
            continue
        if r <= tol:
            hv = 2 * tol + 1e-12
            sig_v = replace(sigma, lower=(-hv, -hv), upper=(hv, hv))
            orb = find_periodic_orbit(system, a, 1, tol, section=sig_v)
            rec = PerturbationRecord("field", "identity", 0.0, 0.0, {}, seed, tuple(map(float, p)), {"eps": eps})
            return ClosingResult(system, rec, orb, 1, 0.0)
        try:
            return _install_push(system, a, p, w, hit.point, t_total, seg, eps, sigma, tol, seed)
        except VerificationFailed as exc:
            last = str(exc)
    raise NotRecurrent(f"no closable return within {w_max:.3g} of the target before t={horizon} ({last})")


def _flow_back(system, a, t):
    from .integrate import flow

    return flow(system.field, system.space, a, -t, system.tolerances.integration, system.tolerances.max_step)


def _install_push(system, a, p, w, q, T, seg, eps, sigma, tol, seed):
    space = system.space
    if system.horizon < 1.5 * T:
        system = replace(system, tolerances=replace(system.tolerances, horizon=1.5 * T))
    s0, L, ramp, W, ts, axis, _ = seg
    _, e1, e2 = _frame(system.field(a))
    ball = max(3.3 * float(np.linalg.norm(w)), 1e-4)
    # every earlier return is farther than 1.7 |w|, so this square sees the chosen return first
    hv = 1.1 * float(np.linalg.norm(w))
    sig_v = replace(sigma, lower=(-hv, -hv), upper=(hv, hv))
    k_ret = 1
    # a tube before the anchor steers the returning stream onto a; one after it steers q's stream
    start = a if s0 < 0 else q
    E = np.stack([e1, e2], axis=1)
    c = -np.asarray(w, dtype=float) / W
    Jinv = -np.eye(2) / W

    def build(coef):
        vec = E @ coef
        term = TubeTerm(
            tuple(map(tuple, axis.tolist())), tuple(ts.tolist()), L, ramp, ball, "push", tuple(map(float, vec)), 0.0, space.periods, "closing-push"
        )
        return system.field.with_terms(term), term

    def residual(coef):
        Y, term = build(coef)
        try:
            res = return_map(system.with_field(Y), sig_v, start, k_ret)
        except PoincareUndefined:
            raise VerificationFailed("perturbed orbit does not return")
        return sig_v.to_chart(res.point) - sig_v.to_chart(start), Y, term

    G, Y, term = residual(c)
    for _ in range(12):
        if np.linalg.norm(G) <= 0.1 * tol:
            break
        dc = -Jinv @ G
        c_new = c + dc
        G_new, Y, term = residual(c_new)
        dG = G_new - G
        # Broyden update of the inverse Jacobian
        den = dc @ Jinv @ dG
        if abs(den) > 1e-300:
            Jinv = Jinv + np.outer(dc - Jinv @ dG, dc @ Jinv) / den
        c, G = c_new, G_new
    else:
        raise VerificationFailed("push correction did not converge", float(np.linalg.norm(G)))
    u = E @ c
    c0 = c0_distance_fields(system.field, Y, space, 4096, seed=seed, extra_points=axis)
    if c0 >= eps:
        raise VerificationFailed(f"push too strong ({c0:.3g})", c0)
    rec = PerturbationRecord(
        "field",
        "closing",
        c0,
        float(np.linalg.norm(u)),
        {"anchor": list(map(float, a)), "segment_start": float(s0), "tube_time": float(L), "ball": ball},
        seed,
        tuple(map(float, p)),
        {"eps": eps, "return_time": T, "w": float(np.linalg.norm(w))},
        (term.to_dict(),),
    )
    new = system.with_field(Y, rec)
    try:
        orb = find_periodic_orbit(new, start, k_ret, tol, section=sig_v)
    except (OrbitNotFound, PoincareUndefined) as exc:
        raise VerificationFailed(str(exc))
    if float(space.distance(orb.representative, p)) >= eps:
        raise VerificationFailed("closed orbit is not within eps of the target")
    return ClosingResult(new, rec, orb, k_ret, float(np.linalg.norm(w)))


# -- attracting perturbations -----------------------------------------------------------
def contraction_ratio(system: ImpulsiveSystem, orbit: PeriodicOrbit, h: float = 1e-4, n_dirs: int = 8) -> float:
    """Largest finite-difference stretch ``|f(u + h e) - f(u)| / h`` of the orbit's return map."""
    f, patch = return_chart_map(system, orbit)
    u0 = patch.to_chart(orbit.representative)
    f0 = f(u0)
    ratios = []
    for th in np.linspace(0.0, np.pi, n_dirs, endpoint=False):
        e = np.array([np.cos(th), np.sin(th)]) if len(u0) == 2 else np.array([1.0])
        ratios.append(float(np.linalg.norm(f(u0 + h * e) - f0)) / h)
        if len(u0) == 1:
            break
    return max(ratios)


def contraction_margin(ratio: float, radius: float, amplification: float) -> float:
    """Size of perturbation a contraction absorbs.

    A return map that contracts by ``ratio`` on a chart ball of ``radius``
    keeps a fixed point in that ball under any change of sup-size
    ``(1 - ratio) * radius``; a perturbation of size ``delta`` changes the
    return map by at most ``amplification * delta``.
    """
    return max(0.0, 1.0 - ratio) * radius / max(amplification, 1e-12)


def permanence_delta(system: ImpulsiveSystem, orbit: PeriodicOrbit, record: PerturbationRecord, ratio: float, fraction: float = 0.1):
    """``fraction`` times the contraction margin of an attractified orbit.

    The contracting ball is the full-strength core of the attracting bump
    (a third of its radius). A perturbation of size ``delta`` moves the
    return map by at most ``amplification * delta``: for impulses each of
    the ``k`` landings moves by ``delta`` and is carried by the flow
    (Lipschitz ``L``) for at most the period; for fields Gronwall gives
    ``(exp(L T) - 1) / L``. Returns ``(delta, radius, amplification)``.
    """
    T = float(orbit.period)
    L = _field_lipschitz(system)
    if record.mode == "impulse":
        radius = float(record.support["radius"]) / 3.0
        amp = orbit.k * float(np.exp(L * T))
    else:
        radius = float(record.support["ball"]) / 3.0
        amp = T if L * T < 1e-12 else float(np.expm1(L * T) / L)
    return fraction * contraction_margin(ratio, radius, amp), radius, amp


def _orbit_samples(system, orbit, dt):
    traj = impulsive_trajectory(system, orbit.representative, orbit.period)
    ts = np.arange(0.0, orbit.period, dt)
    return traj, ts, traj.evaluate_many(ts)


def attractify(
    system: ImpulsiveSystem,
    orbit: PeriodicOrbit,
    eta: float,
    segment_time: float | None = None,
    ball_max: float = 0.6,
    protected=None,
    min_segment: float | None = None,
    refine_tol: float | None = None,
    h: float = 1e-4,
    seed: int = 0,
):
    """Add a transversal contraction ``-eta^2 window(s) plateau(|z|) z`` along a free orbit segment.

    The segment is the stretch of the orbit, between impulses, farthest from
    ``D``, ``D_hat``, the rest of the orbit and the ``protected`` points.
    Returns ``(new system, record, refined orbit, ratio)``.
    """
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    if eta == 0.0:
        ratio = contraction_ratio(system, orbit, h)
        rec = PerturbationRecord("field", "identity", 0.0, 0.0, {}, seed, None, {"eta": 0.0, "ratio": ratio})
        return system, rec, orbit, ratio
    space = system.space
    speed = float(np.linalg.norm(system.field(orbit.representative)))
    dt = 0.02 / max(system.speed_bound, 1e-9)
    traj, ts, pts = _orbit_samples(system, orbit, dt)
    min_segment = 4.5 * eta if min_segment is None else min_segment
    sec_pts = _section_samples(system)
    from scipy.spatial import cKDTree

    boxsize = None
    P = pts
    if space.kind == "flat-torus":
        P = np.mod(pts, np.asarray(space.periods))
        boxsize = np.asarray(space.periods)
    d_sec = cKDTree(np.mod(sec_pts, boxsize) if boxsize is not None else sec_pts, boxsize=boxsize).query(P)[0]
    d_prot = np.full(len(P), np.inf)
    if protected is not None and len(protected):
        Q = np.asarray(protected, float)
        Q = np.mod(Q, boxsize) if boxsize is not None else Q
        d_prot = cKDTree(Q, boxsize=boxsize).query(P)[0]
    # clearance from other passes of the orbit itself: nearest sample more than a window away in time
    tree = cKDTree(P, boxsize=boxsize)
    arc_of = np.searchsorted(np.array([a.start for a in traj.arcs]), ts, side="right") - 1
    seg = segment_time
    best = None
    events = np.array(traj.times + [orbit.period])
    starts = np.concatenate([[0.0], events[:-1]])
    for a0, a1 in zip(starts, events):
        avail = a1 - a0
        L = min(avail * 0.8, seg if seg is not None else avail * 0.8)
        if L < min_segment:
            continue
        # slide the segment across the arc and keep the best clearance
        for frac in np.linspace(0.0, 1.0, 9):
            t0 = a0 + 0.1 * avail + frac * (avail * 0.9 - L - 0.1 * avail if avail * 0.9 - L > 0.1 * avail else 0.0)
            i0, i1 = int(np.searchsorted(ts, t0)), int(np.searchsorted(ts, t0 + L))
            if i1 - i0 < 5:
                continue
            idx = np.arange(i0, i1)
            clear = min(float(d_sec[idx].min()), float(d_prot[idx].min()))
            # other passes
            r_probe = 0.5 * ball_max + 1e-9
            guard = int(np.ceil(2 * ball_max / max(speed * dt, 1e-12)))
            for i in idx[:: max(1, len(idx) // 60)]:
                near = tree.query_ball_point(P[i], r_probe)
                far = [j for j in near if j < i0 - guard or j > i1 + guard]
                if far:
                    clear = min(clear, float(np.min(space.distance(P[far], P[i]))))
            if best is None or clear > best[0]:
                best = (clear, t0, L)
    if best is None:
        raise NoFreeSegment("no orbit segment long enough between impulses")
    clear, t0, L = best
    ball = min(ball_max, 2 * 0.9 * clear)
    if ball <= 0 or L <= 4 * eta:
        raise NoFreeSegment("no clearance around the orbit for a contraction tube")
    n_ax = max(60, min(2000, int(np.ceil(L * speed / (0.05 * ball)))))
    tax = np.linspace(t0, t0 + L, n_ax)
    axis = _unwrap(space, traj.evaluate_many(tax))
    term = TubeTerm(
        tuple(map(tuple, axis.tolist())), tuple((tax - t0).tolist()), L, eta, ball, "contract", None, float(eta), space.periods, "attract"
    )
    Y = system.field.with_terms(term)
    bound = term.c0_size
    # sample at the radius where s * plateau(s) peaks, around every axis point
    s_star = _radial_argmax()
    n_, e1, e2 = _frame(system.field(axis[len(axis) // 2]))
    probes = [axis]
    for th in np.linspace(0, 2 * np.pi, 6, endpoint=False):
        off = []
        for i in range(len(axis)):
            j = min(i, len(axis) - 2)
            tng = axis[j + 1] - axis[j]
            tng /= np.linalg.norm(tng)
            _, f1, f2 = _frame(tng)
            off.append(axis[i] + ball * s_star * (np.cos(th) * f1 + np.sin(th) * f2))
        probes.append(np.array(off))
    c0 = c0_distance_fields(system.field, Y, space, 4096, seed=seed, extra_points=np.vstack(probes))
    rec = PerturbationRecord(
        "field",
        "attract",
        c0,
        bound,
        {"segment_start": float(t0), "segment_time": float(L), "ball": float(ball)},
        seed,
        tuple(map(float, orbit.representative)),
        {"eta": float(eta), "C": float(ball * PLATEAU_RADIAL_MAX)},
        (term.to_dict(),),
    )
    new = system.with_field(Y, rec)
    sec = orbit.section
    k = orbit.k if sec is None else orbit.returns
    orb = find_periodic_orbit(new, orbit.representative, k, tol, section=sec)
    ratio = contraction_ratio(new, orb, h)
    if ratio >= 1.0:
        raise ContractionNotAchieved(ratio)
    orb = replace(orb, classification="attracting")
    rec = replace(rec, params={**rec.params, "ratio": ratio, "plateau_radius": float(ball / 3)})
    new = replace(new, records=new.records[:-1] + (rec,))
    return new, rec, orb, ratio


def _radial_argmax():
    from .profiles import plateau

    s = np.linspace(0.0, 0.5, 20001)
    return float(s[np.argmax(s * plateau(s))])


def attractify_impulse(
    system: ImpulsiveSystem,
    orbit: PeriodicOrbit,
    eta: float,
    rate: float = 0.9,
    protected=None,
    refine_tol: float | None = None,
    h: float = 1e-4,
    seed: int = 0,
):
    """Post-compose the impulse with a radial contraction toward the representative.

    The bump sits at the representative on ``D_hat``'s chart, with radius
    below the distance to the orbit's other landing points (and to the
    ``protected`` points and the patch boundary), so only the last landing
    of each period is contracted. Returns ``(new system, record, orbit, ratio)``.
    """
    if orbit.section is not None or orbit.k < 1:
        raise ValueError("impulse attractor needs an orbit through D_hat")
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    Dh = system.D_hat
    if eta == 0.0:
        ratio = contraction_ratio(system, orbit, h)
        rec = PerturbationRecord("impulse", "identity", 0.0, 0.0, {}, seed, None, {"eta": 0.0, "ratio": ratio})
        return system, rec, orbit, ratio
    u0 = Dh.to_chart(orbit.representative)
    others = [Dh.to_chart(c) for c in orbit.crossings[1:]] if orbit.crossings else []
    if protected is not None and len(protected):
        others += list(Dh.to_chart(np.asarray(protected)))
    others = [o for o in others if np.linalg.norm(o - u0) > 1e-9]
    clear = min([float(np.linalg.norm(o - u0)) for o in others], default=np.inf)
    clear = min(clear, Dh.boundary_gap(u0) - Dh.margin)
    R = min(0.9 * clear, eta / (rate * PLATEAU_RADIAL_MAX), 0.25 * Dh.chart_size)
    if R <= 1e-6:
        raise CrossingsTooClose(f"landing points too close to the representative ({clear:.3g})")
    bump = Bump(tuple(map(float, u0)), float(R), "contract", rate=float(rate))
    J = system.impulse.then(bump)
    c0 = c0_distance_impulses(system.impulse, J)
    rec = PerturbationRecord(
        "impulse",
        "attract",
        c0,
        bump.c0_size,
        {"center": list(map(float, u0)), "radius": float(R)},
        seed,
        tuple(map(float, orbit.representative)),
        {"eta": float(eta), "rate": float(rate)},
        (bump.to_dict(),),
    )
    new = system.with_impulse(J, rec)
    orb = find_periodic_orbit(new, orbit.representative, orbit.k, tol)
    ratio = contraction_ratio(new, orb, h)
    if ratio >= 1.0:
        raise ContractionNotAchieved(ratio)
    orb = replace(orb, classification="attracting")
    rec = replace(rec, params={**rec.params, "ratio": ratio, "plateau_radius": float(R / 3)})
    new = replace(new, records=new.records[:-1] + (rec,))
    return new, rec, orb, ratio


# -- permanence ----------------------------------------------------------------------
def random_impulse_bumps(system: ImpulsiveSystem, delta: float, rng, n_bumps: int = 3):
    """``n_bumps`` random shift bumps on ``D_hat`` scaled so the measured C^0 size is ``delta``."""
    Dh = system.D_hat
    lo, hi = np.asarray(Dh.lower), np.asarray(Dh.upper)
    size = Dh.chart_size
    raw = []
    for _ in range(n_bumps):
        c = lo + rng.random(len(lo)) * (hi - lo)
        r = rng.uniform(0.05, 0.2) * size
        v = rng.normal(size=len(lo))
        v /= np.linalg.norm(v)
        raw.append((c, r, v))

    def make(scale):
        # a radius too small for the displacement is widened to keep the bump injective
        return [Bump(tuple(c), max(float(r), BUMP_SLOPE * scale / SHIFT_LIPSCHITZ), "shift", tuple(scale * v)) for c, r, v in raw]

    scale = delta
    for _ in range(3):
        J = system.impulse.then(*make(scale))
        m = c0_distance_impulses(system.impulse, J)
        if m == 0.0:
            break
        scale *= delta / m
    bumps = make(scale)
    return system.impulse.then(*bumps), bumps


def random_field_blobs(system: ImpulsiveSystem, delta: float, rng, n_blobs: int = 3):
    """Random blob terms away from singularities, scaled to measured C^0 size ``delta``."""
    space = system.space
    X = system.field
    if space.kind == "euclidean-box":
        size = float(np.min(np.asarray(space.upper) - np.asarray(space.lower)))
    elif space.kind == "flat-torus":
        size = float(np.min(space.periods))
    else:
        size = 2.0 * space.radius
    blobs = []
    while len(blobs) < n_blobs:
        c = space.sample(1, seed=int(rng.integers(2**31)))[0] if space.kind != "euclidean-box" else (
            np.asarray(space.lower) + rng.random(space.dimension) * (np.asarray(space.upper) - np.asarray(space.lower))
        )
        r = rng.uniform(0.05, 0.2) * size
        if np.linalg.norm(X(c)) <= 1.1 * r * max(1.0, _field_lipschitz(system)):
            continue
        v = rng.normal(size=space.coord_dim)
        if space.kind == "implicit-surface":
            nrm = c / np.linalg.norm(c)
            v -= (v @ nrm) * nrm
        v /= np.linalg.norm(v)
        blobs.append((c, r, v))
    terms = [BlobTerm(tuple(c), float(r), tuple(v), space.periods, "random") for c, r, v in blobs]
    Y = X.with_terms(*terms)
    m = c0_distance_fields(X, Y, space, 4096, extra_points=np.array([c for c, _, _ in blobs]))
    s = delta / m
    terms = [BlobTerm(tuple(c), float(r), tuple(s * v), space.periods, "random") for c, r, v in blobs]
    return X.with_terms(*terms), terms


def _field_lipschitz(system):
    pts = system.space.sample(512, seed=3)
    rng = np.random.default_rng(0)
    d = rng.normal(size=pts.shape)
    d *= 1e-4 / np.linalg.norm(d, axis=1, keepdims=True)
    X = system.field
    return float(np.max(np.linalg.norm(X(pts + d) - X(pts), axis=1)) / 1e-4)


def permanence_test(
    system: ImpulsiveSystem,
    orbit: PeriodicOrbit,
    delta: float,
    trials: int = 20,
    mode: str = "impulse",
    seed: int = 0,
    survival_radius: float | None = None,
    trial_fields=None,
    refine_tol: float | None = None,
) -> PermanenceReport:
    """Empirical permanence: does the orbit persist under random perturbations of size ``delta``?

    Each trial draws a perturbation from a sub-seed of ``seed`` (or uses the
    given ``trial_fields`` terms, one per trial) and searches for the orbit
    from the old representative; survival means a periodic orbit within
    ``survival_radius`` (default ``10 * delta``).
    """
    if mode not in ("impulse", "field"):
        raise ValueError("mode must be 'impulse' or 'field'")
    radius = 10.0 * delta if survival_radius is None else survival_radius
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    children = np.random.SeedSequence(seed).spawn(trials)
    survivals, worst, outcomes = 0, 0.0, []
    sec = orbit.section
    k = orbit.k if sec is None else orbit.returns
    for i in range(trials):
        rng = np.random.default_rng(children[i])
        if trial_fields is not None:
            terms = trial_fields[i % len(trial_fields)]
            terms = terms if isinstance(terms, (list, tuple)) else (terms,)
            trial = system.with_field(system.field.with_terms(*terms))
        elif mode == "impulse":
            J, _ = random_impulse_bumps(system, delta, rng)
            trial = system.with_impulse(J)
        else:
            Y, _ = random_field_blobs(system, delta, rng)
            trial = system.with_field(Y)
        try:
            found = find_periodic_orbit(trial, orbit.representative, k, tol, section=sec)
            disp = float(system.space.distance(found.representative, orbit.representative))
            ok = disp <= radius
        except (OrbitNotFound, PoincareUndefined, OutsidePatch):
            disp, ok = float("inf"), False
        if ok:
            survivals += 1
            worst = max(worst, disp)
        outcomes.append({"trial": i, "survived": ok, "displacement": disp})
    return PermanenceReport(mode, delta, trials, survivals, worst, seed, radius, tuple(outcomes))
