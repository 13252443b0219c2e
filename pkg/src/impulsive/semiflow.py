"""Impulsive trajectories: flow until the impulsive region, jump, repeat."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import OutsidePatch
from .integrate import StepRecord, dopri_step, first_hit, _post_step
from .system import ImpulsiveSystem

__all__ = ["Arc", "Event", "Trajectory", "impulsive_trajectory", "evaluate", "impulsive_times"]


@dataclass(frozen=True)
class Event:
    time: float
    pre: np.ndarray
    post: np.ndarray
    interior: bool

    @property
    def boundary(self) -> bool:
        return not self.interior

    def to_dict(self):
        return {"time": self.time, "pre": self.pre.tolist(), "post": self.post.tolist(), "interior": self.interior}


@dataclass
class Arc:
    """A smooth piece on ``[start, end]`` stored as accepted integrator steps.

    Step ``j`` starts at absolute time ``t0[j]`` from ``y0[j]`` with slope
    ``f0[j]`` and has length ``h[j]``; evaluation re-integrates one
    Dormand-Prince step, so values are accurate to the integration tolerance.
    """

    start: float
    end: float
    x0: np.ndarray
    t0: np.ndarray
    y0: np.ndarray
    f0: np.ndarray
    h: np.ndarray

    @classmethod
    def from_steps(cls, start, end, x0, steps: list[StepRecord]):
        if steps:
            t0 = np.array([s.t0 for s in steps]) + start
            y0 = np.array([s.y0 for s in steps])
            f0 = np.array([s.f0 for s in steps])
            h = np.array([s.h for s in steps])
        else:
            n = len(x0)
            t0, y0, f0, h = np.zeros(0), np.zeros((0, n)), np.zeros((0, n)), np.zeros(0)
        return cls(start, end, np.asarray(x0, dtype=float), t0, y0, f0, h)


@dataclass
class Trajectory:
    system: ImpulsiveSystem
    x0: np.ndarray
    horizon: float
    arcs: list[Arc] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [e.time for e in self.events]

    @property
    def boundary_sensitive(self) -> bool:
        return any(e.boundary for e in self.events)

    def _arc_index(self, t):
        starts = np.array([a.start for a in self.arcs])
        return np.searchsorted(starts, t, side="right") - 1

    def evaluate_many(self, ts) -> np.ndarray:
        """``gamma_x(t)`` for an array of times; ``t = tau_n`` gives the post-impulse point."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.horizon * (1 + 1e-12) + 1e-12):
            raise ValueError(f"time outside [0, {self.horizon}]")
        flat = ts.ravel()
        out = np.empty((flat.size, len(self.x0)))
        ai = self._arc_index(flat)
        field_ = self.system.field
        space = self.system.space
        for k in np.unique(ai):
            sel = np.flatnonzero(ai == k)
            arc = self.arcs[k]
            tt = flat[sel]
            if len(arc.t0) == 0:
                out[sel] = arc.x0
                continue
            j = np.clip(np.searchsorted(arc.t0, tt, side="right") - 1, 0, len(arc.t0) - 1)
            dt = tt - arc.t0[j]
            y, _, _, _ = dopri_step(field_, arc.y0[j], arc.f0[j], dt)
            y = _post_step(space, y)
            at_start = dt <= 0.0
            y[at_start] = arc.y0[j[at_start]]
            out[sel] = y
        return out.reshape(ts.shape + (len(self.x0),))

    def evaluate(self, t: float) -> np.ndarray:
        return self.evaluate_many(np.array([t]))[0]

    def evaluate_left(self, t: float) -> np.ndarray:
        """Left limit at ``t``: the pre-impulse point when ``t`` is an impulsive time."""
        for e in self.events:
            if e.time == t:
                return e.pre.copy()
        return self.evaluate(t)

    def sample(self, dt: float, t0: float = 0.0, t1: float | None = None):
        t1 = self.horizon if t1 is None else t1
        n = max(2, int(np.ceil((t1 - t0) / dt)) + 1)
        ts = np.linspace(t0, t1, n)
        return ts, self.evaluate_many(ts)

    # -- export ---------------------------------------------------------------
    def to_csv(self, path, dt: float | None = None):
        if dt is None:
            rows = []
            for k, arc in enumerate(self.arcs):
                for t, y in zip(arc.t0, arc.y0):
                    rows.append((t, y, k))
                rows.append((arc.end, self.evaluate_left(arc.end) if k + 1 < len(self.arcs) else self.evaluate(arc.end), k))
        else:
            ts, ys = self.sample(dt)
            ai = self._arc_index(ts)
            rows = list(zip(ts, ys, ai))
        d = len(self.x0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["arc_index"])
            for t, y, k in rows:
                w.writerow([repr(float(t))] + [repr(float(v)) for v in y] + [int(k)])

    def events_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.events], indent=2)


def impulsive_trajectory(system: ImpulsiveSystem, x0, t_end: float) -> Trajectory:
    """The impulsive orbit of ``x0`` on ``[0, t_end]``.

    Between impulses this is the flow; on a hit of ``D`` the point jumps by
    ``I`` and the next search starts after the burn-in that keeps the landing
    section from being mistaken for ``D``. After a miss within the remaining
    time, the trajectory continues as the plain flow.
    """
    x0 = np.asarray(x0, dtype=float)
    traj = Trajectory(system, x0.copy(), float(t_end))
    t, x, burn = 0.0, x0, 0.0
    kw = system.integ_kwargs
    while True:
        steps: list[StepRecord] = []
        hit = first_hit(
            system.field,
            system.space,
            x,
            [system.D],
            t_end - t,
            burn_in=burn,
            record=steps,
            warnings_out=traj.warnings,
            **kw,
        )
        if hit is None:
            traj.arcs.append(Arc.from_steps(t, t_end, x, steps))
            break
        tau = t + hit.time
        traj.arcs.append(Arc.from_steps(t, tau, x, steps))
        try:
            post = system.impulse.apply(hit.point)
        except OutsidePatch:  # pragma: no cover - hit points are contained by construction
            raise
        traj.events.append(Event(tau, hit.point, post, hit.interior))
        if not hit.interior:
            traj.warnings.append(f"boundary event at t={tau:.6g}")
        t, x, burn = tau, post, system.burn_in
        if t >= t_end:
            traj.arcs.append(Arc.from_steps(t, t_end, x, []))
            break
    return traj


def evaluate(traj: Trajectory, t: float) -> np.ndarray:
    return traj.evaluate(t)


def impulsive_times(traj: Trajectory) -> list[float]:
    return traj.times
