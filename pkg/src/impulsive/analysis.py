"""Recurrence proxy, density gap and the densification experiment."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExhausted, ImpulsiveError, OrbitNotFound, PoincareUndefined
from .poincare import PeriodicOrbit, find_periodic_orbit, orbit_points
from .profiles import PLATEAU_RADIAL_MAX
from .semiflow import impulsive_trajectory
from .system import ImpulsiveSystem

__all__ = [
    "Region",
    "RecurrentProxy",
    "DensityReport",
    "recurrent_proxy",
    "density_gap",
    "densify",
    "default_region",
    "impulse_targets",
]


@dataclass(frozen=True)
class Region:
    """Axis-aligned box, optionally cut to an annulus ``r0 <= hypot(x, y) <= r1``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    annulus: tuple[float, float] | None = None

    def cells(self, eps_grid: float) -> np.ndarray:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        axes = []
        for a, b in zip(lo, hi):
            n = max(1, int(round((b - a) / eps_grid)))
            axes.append(a + (np.arange(n) + 0.5) * (b - a) / n)
        mesh = np.meshgrid(*axes, indexing="ij")
        C = np.stack([m.ravel() for m in mesh], axis=-1)
        if self.annulus is not None:
            r = np.hypot(C[:, 0], C[:, 1])
            C = C[(r >= self.annulus[0]) & (r <= self.annulus[1])]
        return C

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "annulus": None if self.annulus is None else list(self.annulus)}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        ann = d.get("annulus")
        return cls(tuple(d["lower"]), tuple(d["upper"]), None if ann is None else tuple(ann))


@dataclass
class RecurrentProxy:
    eps_grid: float
    region: Region
    centers: np.ndarray
    marked: np.ndarray
    flagged: np.ndarray
    t_min: float
    t_max: float
    samples_per_cell: int
    return_times: np.ndarray = field(default=None)

    @property
    def active(self) -> np.ndarray:
        """Centers of marked cells that are not boundary-flagged."""
        return self.centers[self.marked & ~self.flagged]

    def to_csv(self, path):
        d = self.centers.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"c{i + 1}" for i in range(d)] + ["marked", "flagged"])
            for c, m, f in zip(self.centers, self.marked, self.flagged):
                w.writerow([repr(float(v)) for v in c] + [int(m), int(f)])

    def to_dict(self) -> dict:
        return {
            "eps_grid": self.eps_grid,
            "region": self.region.to_dict(),
            "cells": int(len(self.centers)),
            "marked": int(self.marked.sum()),
            "flagged": int(self.flagged.sum()),
            "t_min": self.t_min,
            "t_max": self.t_max,
            "samples_per_cell": self.samples_per_cell,
        }


def _cell_samples(center, eps_grid, k, rng):
    if k <= 1:
        return center[None, :]
    jitter = (rng.random((k - 1, len(center))) - 0.5) * eps_grid
    return np.vstack([center, center + jitter])


def _proxy_system(system):
    tol = system.tolerances
    return replace(
        system, tolerances=replace(tol, integration=max(tol.integration, 1e-8), event=max(tol.event, 1e-8))
    )


def recurrent_proxy(
    system: ImpulsiveSystem,
    region: Region,
    eps_grid: float,
    t_min: float = 1.0,
    t_max: float = 20.0,
    samples_per_cell: int = 1,
    seed: int = 0,
) -> RecurrentProxy:
    """Cells of ``region`` whose samples come back within ``eps_grid`` during ``[t_min, t_max]``.

    A cell is marked when the impulsive orbit of one of its samples enters
    the ``eps_grid``-neighbourhood (max norm) of the cell center at some
    time in ``[t_min, t_max]``; the orbit is sampled so consecutive points
    are at most ``eps_grid / 2`` apart. Cells whose samples meet ``D``'s
    boundary band are flagged.
    """
    if t_min < 1.0:
        raise ValueError("t_min must be at least 1")
    sysp = _proxy_system(system)
    space = system.space
    centers = region.cells(eps_grid)
    rng = np.random.default_rng(seed)
    marked = np.zeros(len(centers), bool)
    flagged = np.zeros(len(centers), bool)
    rtimes = np.full(len(centers), np.inf)
    dt = 0.5 * eps_grid / max(system.speed_bound, 1e-12)
    for i, c in enumerate(centers):
        for x in _cell_samples(c, eps_grid, samples_per_cell, rng):
            try:
                traj = impulsive_trajectory(sysp, x, t_max)
            except ImpulsiveError:
                flagged[i] = True
                continue
            if traj.boundary_sensitive:
                flagged[i] = True
            ts = np.arange(t_min, t_max + 0.5 * dt, dt)
            ts = ts[ts <= t_max]
            ys = traj.evaluate_many(ts)
            d = space.displacement(c[None, :], ys) if space.kind == "flat-torus" else ys - c
            hit = np.flatnonzero(np.max(np.abs(d), axis=1) <= eps_grid)
            if hit.size:
                marked[i] = True
                rtimes[i] = min(rtimes[i], ts[hit[0]])
                break
    return RecurrentProxy(eps_grid, region, centers, marked, flagged, t_min, t_max, samples_per_cell, rtimes)


def density_gap(orbits, proxy: RecurrentProxy, system: ImpulsiveSystem, spacing: float | None = None) -> float:
    """Largest distance from an active proxy cell center to the sampled periodic orbits.

    Returns 0 for an empty proxy and ``inf`` when there are cells but no orbits.
    """
    C = proxy.active
    if len(C) == 0:
        return 0.0
    if not orbits:
        return float("inf")
    spacing = 0.5 * proxy.eps_grid if spacing is None else spacing
    pts = np.vstack([orbit_points(system, o, spacing) for o in orbits])
    space = system.space
    if space.kind == "flat-torus":
        L = np.asarray(space.periods, float)
        d, _ = cKDTree(np.mod(pts, L), boxsize=L).query(np.mod(C, L))
    else:
        d, _ = cKDTree(pts).query(C)
    return float(np.max(d))


# -- densification -----------------------------------------------------------------------
@dataclass
class DensityReport:
    mode: str
    eps: float
    budget: int
    seed: int
    status: str
    iterations: int
    gap_trace: list
    final_gap: float
    total_perturbation: float
    orbits: list
    records: list
    skipped: list
    proxy: dict

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "eps": self.eps,
            "budget": self.budget,
            "seed": self.seed,
            "status": self.status,
            "iterations": self.iterations,
            "gap_trace": [_num(g) for g in self.gap_trace],
            "final_gap": _num(self.final_gap),
            "total_perturbation": self.total_perturbation,
            "orbits": self.orbits,
            "records": self.records,
            "skipped": self.skipped,
            "proxy": self.proxy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _num(x):
    return "inf" if x == float("inf") else float(x)


def default_region(system: ImpulsiveSystem, eps_grid: float) -> Region:
    """A slab just downstream of ``D_hat`` (for the built-in torus) or an annulus (for the rotation)."""
    if system.space.kind == "flat-torus":
        o = np.asarray(system.D_hat.origin, float)
        lo, hi = np.asarray(system.D_hat.lower), np.asarray(system.D_hat.upper)
        return Region((o[0], lo[0] - eps_grid, lo[1] - eps_grid), (o[0] + 2 * eps_grid, hi[0] + 3 * eps_grid, hi[1] + 3 * eps_grid))
    h = eps_grid / 2
    return Region((-2.4, -2.4, -h), (2.4, 2.4, h), (1.6, 2.4))


def impulse_targets(system: ImpulsiveSystem, centers, inset: float = 0.0):
    """Backward flow of each center to ``D_hat`` within one plane crossing.

    Returns ``(indices, points on D_hat)`` for centers whose backward
    orbit meets ``D_hat``'s rectangle before any other section; these are
    the cells reachable through ``D_hat``.
    """
    from .integrate import first_hit

    Dh = system.D_hat
    neg = _Negated(system.field)
    idx, pts = [], []
    for i, c in enumerate(np.asarray(centers, float)):
        if Dh.contains(c, tol=1e-9):
            hit_pt = c
        else:
            hit = first_hit(neg, system.space, c, [Dh], 1.0, tol=1e-10, event_tol=1e-10, max_step=system.tolerances.max_step)
            if hit is None:
                continue
            hit_pt = hit.point
        u = Dh.to_chart(hit_pt)
        if Dh.boundary_gap(u) >= max(inset, Dh.margin):
            idx.append(i)
            pts.append(Dh.from_chart(u))
    return np.array(idx, dtype=int), np.array(pts).reshape(-1, system.space.coord_dim)


class _Negated:
    def __init__(self, f):
        self.f = f

    def __call__(self, p):
        return -self.f(p)


def _reverify(system, orbits, tol):
    out = []
    for o in orbits:
        k = o.k if o.section is None else o.returns
        r = find_periodic_orbit(system, o.representative, k, tol, section=o.section)
        out.append(replace(r, classification=o.classification, index=o.index))
    return out


def densify(
    system: ImpulsiveSystem,
    mode: str,
    eps: float,
    budget: int,
    seed: int = 0,
    region: Region | None = None,
    eps_grid: float | None = None,
    t_min: float = 1.0,
    t_max: float | None = None,
    proxy: RecurrentProxy | None = None,
    orbits=(),
    size_cap: float | None = None,
):
    """Close and attract orbits at the worst-covered recurrent cells until the density gap is at most ``eps``.

    Each iteration takes the active cell farthest from the current orbits,
    closes an orbit there (impulse mode: at the cell's backward image on
    ``D_hat``; field mode: at the cell center) with ``eps' = eps / 2``,
    makes it attracting (impulse mode: ``eta = eps / 10``; field mode:
    ``eta = sqrt(eps)``, whose tube costs about ``eta^2 * ball / 4``
    in C^0), and re-verifies all earlier orbits on the new system. A failed iteration is recorded, the cell is
    skipped and the system is left unchanged. The total perturbation is the
    sum of the measured sizes and is kept below ``size_cap`` (default
    ``5 * eps``). Returns ``(system, report, orbits)``; raises
    :class:`BudgetExhausted` carrying the report when the budget runs out
    with the gap still above ``eps``.
    """
    from .perturbation import attractify, attractify_impulse, closing_field, closing_impulse

    if mode not in ("impulse", "field"):
        raise ValueError("mode must be 'impulse' or 'field'")
    eps_grid = eps / 2 if eps_grid is None else eps_grid
    size_cap = 5 * eps if size_cap is None else size_cap
    if proxy is None:
        region = default_region(system, eps_grid) if region is None else region
        proxy = recurrent_proxy(system, region, eps_grid, t_min, 200.0 if t_max is None else t_max, 1, seed)
    active = proxy.active
    if mode == "impulse":
        allowed, targets = impulse_targets(system, active, inset=eps / 8)
        keep = np.zeros(len(active), bool)
        keep[allowed] = True
        # restrict the proxy to cells reachable through D_hat
        sel = np.flatnonzero(proxy.marked & ~proxy.flagged)
        marked = np.zeros_like(proxy.marked)
        marked[sel[keep]] = True
        proxy = replace(proxy, marked=marked)
        active = proxy.active
        target_of = dict(zip(range(len(active)), targets))
    tol = system.tolerances.periodic
    orbits = list(orbits)
    total = 0.0
    records, skipped = [], []
    gap = density_gap(orbits, proxy, system)
    trace = [gap]
    it = 0
    eps_close = eps / 2
    if mode == "impulse":
        eta = eta_bound = eps / 10
    else:
        eta = float(np.sqrt(eps))
        eta_bound = eta * eta * 0.6 * PLATEAU_RADIAL_MAX
    while gap > eps and it < budget:
        it += 1
        # worst-covered active cell not yet skipped
        if orbits:
            pts = np.vstack([orbit_points(system, o, 0.5 * proxy.eps_grid) for o in orbits])
            if system.space.kind == "flat-torus":
                L = np.asarray(system.space.periods, float)
                dist, _ = cKDTree(np.mod(pts, L), boxsize=L).query(np.mod(active, L))
            else:
                dist, _ = cKDTree(pts).query(active)
        else:
            dist = np.full(len(active), np.inf)
        order = [i for i in np.lexsort((np.arange(len(active)), -dist)) if i not in skipped]
        if not order:
            break
        ci = int(order[0])
        if total + eps_close + eta_bound >= size_cap:
            skipped.append(ci)
            records.append({"iteration": it, "cell": ci, "error": "perturbation size cap reached"})
            break
        protected = [orbit_points(system, o, 0.5 * proxy.eps_grid) for o in orbits]
        try:
            if mode == "impulse":
                land = [np.asarray(c) for o in orbits for c in (o.crossings or ())]
                res = closing_impulse(system, target_of[ci], eps_close, protected=np.array(land) if land else None, seed=seed)
                new, rec_a, orb, ratio = attractify_impulse(res.system, res.orbit, eta, protected=np.array(land) if land else None, seed=seed)
            else:
                prot = np.vstack(protected) if protected else None
                res = closing_field(system, active[ci], eps_close, protected=prot, seed=seed)
                new, rec_a, orb, ratio = attractify(res.system, res.orbit, eta, protected=prot, seed=seed)
            kept = _reverify(new, orbits, tol)
        except (ImpulsiveError, OrbitNotFound, PoincareUndefined) as exc:
            skipped.append(ci)
            records.append({"iteration": it, "cell": ci, "error": f"{type(exc).__name__}: {exc}"})
            trace.append(gap)
            continue
        size = res.record.c0_size + rec_a.c0_size
        total += size
        system = new
        orbits = kept + [orb]
        gap = density_gap(orbits, proxy, system)
        trace.append(gap)
        records.append(
            {
                "iteration": it,
                "cell": ci,
                "closing": res.record.to_dict(),
                "attract": rec_a.to_dict(),
                "ratio": ratio,
                "size": size,
                "gap": gap,
            }
        )
    status = "converged" if gap <= eps else "budget_exhausted"
    report = DensityReport(
        mode,
        eps,
        budget,
        seed,
        status,
        it,
        trace,
        gap,
        total,
        [o.to_dict() for o in orbits],
        records,
        [int(s) for s in skipped],
        proxy.to_dict() | {"active": int(len(active))},
    )
    if gap > eps:
        raise BudgetExhausted(report)
    return system, report, orbits
