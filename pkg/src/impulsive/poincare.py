"""Impulsive Poincare maps, return maps to free sections, periodic-orbit search."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import BoundaryLanding, NoReturn, OrbitNotFound, OutsidePatch, PoincareUndefined
from .geometry import SectionPatch
from .integrate import first_hit
from .system import ImpulsiveSystem

__all__ = [
    "PeriodicOrbit",
    "ReturnResult",
    "poincare_hat",
    "poincare_hat_chart",
    "poincare_D",
    "return_map",
    "find_periodic_orbit",
    "periodic_orbits_up_to",
    "orbit_points",
    "same_orbit",
]


@dataclass(frozen=True)
class PeriodicOrbit:
    """A closed impulsive orbit.

    ``representative`` lies on ``D_hat`` (``section is None``) or on the free
    section ``section``; ``crossings`` lists the ``k`` landing points on
    ``D_hat`` in order, starting with the representative in the first case.
    """

    representative: np.ndarray
    period: float
    k: int
    residual: float
    classification: str = "unknown"
    index: int | None = None
    section: SectionPatch | None = None
    crossings: tuple = ()
    family: bool = False
    flights: tuple = ()
    returns: int = 1

    @property
    def chart_point(self):
        sec = self.section
        return None if sec is None else sec.to_chart(self.representative)

    def to_dict(self) -> dict:
        return {
            "representative": np.asarray(self.representative).tolist(),
            "period": self.period,
            "k": self.k,
            "residual": self.residual,
            "classification": self.classification,
            "index": self.index,
            "family": self.family,
            "section": None if self.section is None else (self.section.name or "custom"),
        }


@dataclass(frozen=True)
class ReturnResult:
    point: np.ndarray
    time: float
    impulses: int
    landings: tuple = ()
    boundary: int = 0


def poincare_hat(system: ImpulsiveSystem, y):
    """``P(y) = I(phi_tau(y))``; returns ``(point on D_hat, flight time)``.

    Raises :class:`NoReturn` when ``D`` is not reached within the horizon and
    :class:`BoundaryLanding` when the hit lies in ``D``'s margin band.
    """
    y = np.asarray(y, dtype=float)
    if not system.D_hat.contains(y, tol=max(system.D_hat.tol, 1e-6)):
        raise OutsidePatch(f"{y} is not on the landing section")
    hit = first_hit(system.field, system.space, y, [system.D], system.horizon, burn_in=system.burn_in, **system.integ_kwargs)
    if hit is None:
        raise NoReturn(f"no hit of D within horizon {system.horizon} from {y}")
    if not hit.interior:
        raise BoundaryLanding(f"hit of D in its boundary band at chart {hit.chart}", hit.point, hit.time)
    return system.impulse.apply(hit.point), hit.time


def poincare_hat_chart(system: ImpulsiveSystem, u):
    """Chart version of :func:`poincare_hat` on ``D_hat``."""
    q, t = poincare_hat(system, system.D_hat.from_chart(np.asarray(u, dtype=float)))
    return system.D_hat.to_chart(q), t


def poincare_D(system: ImpulsiveSystem, x):
    """``f = I^-1 o P o I`` on ``D``; returns ``(point on D, flight time)``."""
    y = system.impulse.apply(np.asarray(x, dtype=float))
    q, t = poincare_hat(system, y)
    return system.impulse.inverse(q), t


def return_map(
    system: ImpulsiveSystem, sigma: SectionPatch, x, n_crossings: int = 1, strict: bool = False
) -> ReturnResult:
    """Follow the impulsive orbit of ``x`` to its ``n_crossings``-th return to ``sigma``.

    Returns are crossings in the same direction as the flow through
    ``sigma`` at ``x``; impulses met on the way are applied and counted.
    Impulses from ``D``'s boundary band are counted in ``boundary``, or
    raise :class:`BoundaryLanding` when ``strict``.
    """
    if n_crossings < 1:
        raise ValueError("n_crossings must be at least 1")
    x = np.asarray(x, dtype=float)
    if not sigma.contains(x, tol=max(sigma.tol, 1e-6)):
        raise OutsidePatch(f"{x} is not on the section")
    direction = int(np.sign(float(sigma.grad_g(x) @ system.field(x))))
    if direction == 0:
        raise PoincareUndefined("section is tangent to the field at the start point")
    t_total, n_imp, count, burn, n_bd = 0.0, 0, 0, 0.0, 0
    landings = []
    p = x
    while count < n_crossings:
        remaining = system.horizon - t_total
        if remaining <= 0.0:
            raise NoReturn(f"no return to the section within horizon {system.horizon}")
        hit = first_hit(
            system.field,
            system.space,
            p,
            [sigma, system.D],
            remaining,
            burn_in=burn,
            directions=[direction, 0],
            **system.integ_kwargs,
        )
        if hit is None:
            raise NoReturn(f"no return to the section within horizon {system.horizon}")
        t_total += hit.time
        if hit.section_index == 1:
            if not hit.interior:
                if strict:
                    raise BoundaryLanding("impulse from the boundary band of D", hit.point, t_total)
                n_bd += 1
            p = system.impulse.apply(hit.point)
            landings.append(p)
            n_imp += 1
            burn = [0.0, system.burn_in]
        else:
            count += 1
            p = hit.point
            burn = 0.0
    return ReturnResult(p, t_total, n_imp, tuple(landings), n_bd)


# -- orbit search -----------------------------------------------------------------
def _iterate(system, sec, k, u):
    """k-fold return in chart coordinates; returns (chart point, time, landings)."""
    if sec is None:
        q = system.D_hat.from_chart(u)
        t, pts, flights = 0.0, [q], []
        for _ in range(k):
            q, tf = poincare_hat(system, q)
            t += tf
            pts.append(q)
            flights.append(tf)
        return system.D_hat.to_chart(q), t, pts[:-1], flights
    res = return_map(system, sec, sec.from_chart(u), k)
    return sec.to_chart(res.point), res.time, list(res.landings), [res.time]


def find_periodic_orbit(
    system: ImpulsiveSystem,
    guess,
    k: int = 1,
    refine_tol: float | None = None,
    section: SectionPatch | None = None,
    budget: int = 60,
    fd_step: float = 1e-6,
) -> PeriodicOrbit:
    """Refine a fixed point of the ``k``-fold return map near ``guess``.

    Works in the chart of ``D_hat`` (or of ``section``): Newton steps with a
    finite-difference Jacobian, Broyden updates and backtracking, falling
    back to plain fixed-point iteration (which converges for contractions).
    ``budget`` bounds the number of k-fold map evaluations.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    sec = section
    patch = system.D_hat if sec is None else sec
    guess = np.asarray(guess, dtype=float)
    if not patch.contains(guess, tol=max(patch.tol, 1e-6)):
        raise OutsidePatch("guess is not on the section patch")
    u = patch.to_chart(guess)
    evals = [0]

    def F(v):
        if not patch.in_rect(v):
            raise OutsidePatch("iterate left the patch")
        evals[0] += 1
        w, t, pts, fl = _iterate(system, sec, k, v)
        return w - v, t, pts, fl

    Fu, T, pts, fl = F(u)
    best = (float(np.linalg.norm(Fu)), u, Fu, T, pts, fl)

    def done(Fv, v, Tv, ptsv, flv):
        nonlocal best
        r = float(np.linalg.norm(Fv))
        if r < best[0]:
            best = (r, v, Fv, Tv, ptsv, flv)
        return r <= tol

    if not done(Fu, u, T, pts, fl):
        m = len(u)
        J = None
        while evals[0] < budget:
            if J is None:
                if evals[0] + m >= budget:
                    break
                J = np.empty((m, m))
                h = fd_step * max(1.0, patch.chart_size)
                try:
                    for i in range(m):
                        e = np.zeros(m)
                        inward = 1.0 if u[i] - patch._lo[i] < patch._hi[i] - u[i] else -1.0
                        e[i] = inward * h
                        J[:, i] = (F(u + e)[0] - Fu) / e[i]
                except PoincareUndefined:
                    J = -np.eye(m)
            try:
                step = -np.linalg.solve(J, Fu) if np.linalg.cond(J) < 1e10 else Fu
            except np.linalg.LinAlgError:
                step = Fu
            cap = 0.25 * patch.chart_size
            if np.linalg.norm(step) > cap:
                step *= cap / np.linalg.norm(step)
            lam, accepted = 1.0, False
            while lam > 1e-3 and evals[0] < budget:
                v = u + lam * step
                try:
                    Fv, Tv, ptsv, flv = F(v)
                except (PoincareUndefined, OutsidePatch):
                    lam *= 0.5
                    continue
                if np.linalg.norm(Fv) < np.linalg.norm(Fu):
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                if J is not None and not np.allclose(J, -np.eye(m)):
                    # fixed-point fallback: u <- P^k(u)
                    J = -np.eye(m)
                    continue
                break
            s = v - u
            J = J + np.outer((Fv - Fu) - J @ s, s) / float(s @ s)
            u, Fu, T, pts, fl = v, Fv, Tv, ptsv, flv
            if done(Fu, u, T, pts, fl):
                break
    r, u, Fu, T, pts, fl = best
    if r > tol:
        raise OrbitNotFound(
            f"no period-{k} orbit near the guess (best residual {r:.3g})", best=patch.from_chart(u), residual=r
        )
    rep = patch.from_chart(u)
    resid = float(system.space.distance(rep, patch.from_chart(u + Fu)))
    crossings = tuple(np.asarray(p) for p in pts)
    n_imp = k if sec is None else len(crossings)
    return PeriodicOrbit(
        rep, float(T), n_imp, resid, section=sec, crossings=crossings, flights=tuple(fl), returns=1 if sec is None else k
    )


def orbit_points(system: ImpulsiveSystem, orbit: PeriodicOrbit, spacing: float):
    """Points along one period of the orbit, consecutive samples at most ``spacing`` apart."""
    from .semiflow import impulsive_trajectory

    traj = impulsive_trajectory(system, orbit.representative, orbit.period)
    dt = spacing / max(system.speed_bound, 1e-12)
    _, pts = traj.sample(dt, 0.0, orbit.period)
    return pts


def same_orbit(a: PeriodicOrbit, b: PeriodicOrbit, space, radius: float = 1e-4) -> bool:
    """Whether ``b``'s representative lies within ``radius`` of one of ``a``'s section points."""
    if (a.section is None) != (b.section is None):
        return False
    if a.section is None:
        pts = np.array(a.crossings) if a.crossings else a.representative[None, :]
        return bool(np.min(space.distance(pts, b.representative)) <= radius)
    return bool(space.distance(a.representative, b.representative) <= radius)


def periodic_orbits_up_to(
    system: ImpulsiveSystem,
    t_bound: float,
    grid_resolution: int = 10,
    merge_radius: float = 1e-4,
    refine_tol: float | None = None,
    inset: float | None = None,
) -> list[PeriodicOrbit]:
    """Periodic orbits through ``D_hat`` with period at most ``t_bound``.

    Every grid seed is iterated under ``P`` while the accumulated flight time
    stays below ``t_bound``. A seed becomes a candidate for ``k`` when its
    ``k``-th return lies within ``(1 + L^k)`` grid cells of it, ``L`` being
    the largest Lipschitz ratio of ``P`` measured between neighbouring seeds
    with comparable flight times (pairs across a jump of ``P`` are skipped);
    candidates are refined with :func:`find_periodic_orbit` and merged.
    When every grid seed is fixed at the first return the map is locally
    the identity and the whole grid is reported as one flagged family.
    """
    if t_bound <= 0:
        raise ValueError("t_bound must be positive")
    Dh = system.D_hat
    tol = system.tolerances.periodic if refine_tol is None else refine_tol
    inset = Dh.margin * 2 if inset is None else inset
    U = Dh.chart_grid(grid_resolution, inset)
    h = float(np.max((Dh._hi - Dh._lo - 2 * inset) / max(grid_resolution - 1, 1)))
    paths = []
    for u in U:
        y = Dh.from_chart(u)
        seq, t = [], 0.0
        while True:
            try:
                y, tf = poincare_hat(system, y)
            except PoincareUndefined:
                break
            t += tf
            if t > t_bound * (1 + 1e-12):
                break
            seq.append((Dh.to_chart(y), t))
        paths.append(seq)
    # Lipschitz estimate of P between grid neighbours on the same branch; pairs
    # whose flight times differ by half the minimal travel time straddle a
    # discontinuity of P and say nothing about its local expansion
    L = 1.0
    tree = cKDTree(U)
    jump = 0.5 * system.min_travel_time
    for i, j in tree.query_pairs(h * 1.01):
        if paths[i] and paths[j] and abs(paths[i][0][1] - paths[j][0][1]) < jump:
            L = max(L, float(np.linalg.norm(paths[i][0][0] - paths[j][0][0]) / np.linalg.norm(U[i] - U[j])))
    found: list[PeriodicOrbit] = []
    fixed_first = 0
    for i, (u, seq) in enumerate(zip(U, paths)):
        for k, (w, t) in enumerate(seq, start=1):
            if np.linalg.norm(w - u) > (1.0 + min(L**k, 1e6)) * h:
                continue
            if k == 1 and np.linalg.norm(w - u) <= tol:
                fixed_first += 1
            seed = Dh.from_chart(u)
            if any(same_orbit(o, PeriodicOrbit(seed, t, k, 0.0), system.space, merge_radius) for o in found):
                break
            try:
                orb = find_periodic_orbit(system, seed, k, tol)
            except (OrbitNotFound, PoincareUndefined, OutsidePatch):
                continue
            if orb.period > t_bound * (1 + 1e-9):
                continue
            if not any(same_orbit(o, orb, system.space, merge_radius) for o in found):
                found.append(orb)
            break
    family = len(U) > 1 and fixed_first == len(U)
    if family:
        found = [replace(o, family=True) for o in found]
    return sorted(found, key=lambda o: (o.period, o.k))
