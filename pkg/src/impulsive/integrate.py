"""Adaptive Dormand-Prince 5(4) integration and first hitting times.

Events are bracketed per accepted step, located by bisection on the
continuous extension of the step, then polished with a few Newton
corrections that re-integrate from the step start so the reported hit sits
on the section to integrator accuracy.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainExit, StepUnderflow
from .geometry import AmbientSpace, SectionPatch

__all__ = [
    "Tolerances",
    "HitResult",
    "TangencyWarning",
    "StepRecord",
    "dopri_step",
    "integrate",
    "flow",
    "first_hit",
    "first_hitting_time",
    "c0_distance_fields",
]

# Dormand-Prince error weights (b - b*) and dense-output coefficients
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)


@dataclass(frozen=True)
class Tolerances:
    integration: float = 1e-9
    event: float = 1e-8
    impulse_inverse: float = 1e-12
    section: float = 1e-6
    max_step: float = 0.25
    horizon: float = 200.0
    periodic: float = 1e-8

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class TangencyWarning(UserWarning):
    """A crossing was rejected because the field is nearly tangent there."""


@dataclass(frozen=True)
class HitResult:
    time: float
    point: np.ndarray
    transversality: float
    interior: bool
    chart: np.ndarray
    section_index: int = 0


@dataclass
class StepRecord:
    t0: float
    y0: np.ndarray
    f0: np.ndarray
    h: float
    y1: np.ndarray
    f1: np.ndarray
    k: list

    def dense(self, theta):
        """Continuous extension at ``t0 + theta * h``."""
        ydiff = self.y1 - self.y0
        bspl = self.h * self.f0 - ydiff
        r4 = ydiff - self.h * self.f1 - bspl
        k = self.k
        r5 = self.h * (_D[0] * k[0] + _D[2] * k[2] + _D[3] * k[3] + _D[4] * k[4] + _D[5] * k[5] + _D[6] * k[6])
        th1 = 1.0 - theta
        return self.y0 + theta * (ydiff + th1 * (bspl + theta * (r4 + th1 * r5)))


def dopri_step(f: Callable, y, fy, h):
    """One Dormand-Prince step; returns ``(y_new, f_new, err_vector, stages)``.

    Works on batches: ``y`` of shape (n,) or (N, n) with ``h`` scalar or (N,).
    """
    h = np.asarray(h, dtype=float)
    hb = h[..., None] if h.ndim else float(h)
    k1 = fy
    k2 = f(y + hb * (0.2 * k1))
    k3 = f(y + hb * (3 / 40 * k1 + 9 / 40 * k2))
    k4 = f(y + hb * (44 / 45 * k1 - 56 / 15 * k2 + 32 / 9 * k3))
    k5 = f(y + hb * (19372 / 6561 * k1 - 25360 / 2187 * k2 + 64448 / 6561 * k3 - 212 / 729 * k4))
    k6 = f(y + hb * (9017 / 3168 * k1 - 355 / 33 * k2 + 46732 / 5247 * k3 + 49 / 176 * k4 - 5103 / 18656 * k5))
    y_new = y + hb * (35 / 384 * k1 + 500 / 1113 * k3 + 125 / 192 * k4 - 2187 / 6784 * k5 + 11 / 84 * k6)
    k7 = f(y_new)  # FSAL: the last stage is the slope at the new point
    err = hb * (_E[0] * k1 + _E[2] * k3 + _E[3] * k4 + _E[4] * k5 + _E[5] * k6 + _E[6] * k7)
    return y_new, k7, err, [k1, None, k3, k4, k5, k6, k7]


def _error_norm(err, y0, y1, tol):
    scale = tol + tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(np.abs(err) / scale))


def _post_step(space: AmbientSpace, y):
    if space.kind == "flat-torus":
        return space.reduce(y)
    if space.kind == "implicit-surface":
        return space.project(y)
    return y


def integrate(
    field: Callable,
    space: AmbientSpace,
    x0,
    t_end: float,
    tol: float = 1e-9,
    max_step: float = 0.25,
    on_step: Callable[[StepRecord], bool] | None = None,
    t_start: float = 0.0,
):
    """Integrate ``x' = field(x)`` from ``t_start`` to ``t_end`` (``t_end >= t_start``).

    ``on_step`` is called for every accepted step and may return True to
    stop. Returns ``(t, y)`` at the stop.
    """
    y = np.array(x0, dtype=float)
    t = float(t_start)
    if t_end <= t:
        return t, y
    fy = field(y)
    speed = float(np.linalg.norm(fy))
    h = min(max_step, t_end - t, 0.05 / speed if speed > 0 else max_step)
    h = max(h, 1e-6 * min(max_step, t_end - t))
    while t < t_end:
        h = min(h, t_end - t)
        if h < 1e-14 * max(1.0, abs(t)):
            if t_end - t < 1e-13 * max(1.0, abs(t)):
                break
            raise StepUnderflow(t)
        y_new, f_new, err, k = dopri_step(field, y, fy, h)
        e = _error_norm(err, y, y_new, tol)
        if not np.all(np.isfinite(y_new)) or e > 1.0:
            fac = 0.2 if not np.isfinite(e) else max(0.2, 0.9 * e ** (-0.2))
            h *= fac
            continue
        t_new = t + h if t_end - (t + h) > 1e-15 * max(1.0, abs(t_end)) else t_end
        if space.kind == "euclidean-box" and not space.inside(y_new):
            raise DomainExit(t_new, y_new)
        if on_step is not None:
            # the record keeps the unreduced end point so that the step is continuous
            rec = StepRecord(t, y, fy, t_new - t, y_new, f_new, k)
            if on_step(rec):
                return t_new, _post_step(space, y_new)
        t, y, fy = t_new, _post_step(space, y_new), f_new
        fac = 5.0 if e == 0.0 else min(5.0, max(0.2, 0.9 * e ** (-0.2)))
        h = min(h * fac, max_step)
    return t, y


def _negated(field):
    return lambda p: -field(p)


def flow(field, space: AmbientSpace, x0, t: float, tol: float = 1e-9, max_step: float = 0.25):
    """``phi_t(x0)``; negative ``t`` integrates the negated field."""
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    f = field if t > 0 else _negated(field)
    _, y = integrate(f, space, x0, abs(t), tol=tol, max_step=max_step)
    return y


def _crossed(g0, g1, direction):
    if direction >= 0 and g0 < 0.0 <= g1 and g1 != g0:
        return True
    if direction <= 0 and g0 > 0.0 >= g1 and g1 != g0:
        return True
    return False


def _locate(field, rec: StepRecord, section: SectionPatch, event_tol: float, gfun=None):
    """Crossing time and point inside an accepted step."""
    gfun = section.g if gfun is None else gfun
    g0 = float(gfun(rec.y0))
    lo, hi = 0.0, 1.0
    while (hi - lo) * rec.h > event_tol:
        mid = 0.5 * (lo + hi)
        gm = float(gfun(rec.dense(mid)))
        if (gm < 0.0) == (g0 < 0.0) and gm != 0.0:
            lo = mid
        else:
            hi = mid
    th = 0.5 * (lo + hi)
    # Newton polish on exact re-integration from the step start
    y = rec.y0
    for _ in range(3):
        h = th * rec.h
        if h <= 0.0:
            y = rec.y0
            break
        y, fy, _, _ = dopri_step(field, rec.y0, rec.f0, h)
        gv = float(gfun(y))
        dg = float(section.grad_g(y) @ fy)
        if dg == 0.0 or abs(gv) < 1e-15:
            break
        step = -gv / dg / rec.h
        th_new = min(max(th + step, lo - 1e-9), hi + 1e-9)
        if abs(th_new - th) * rec.h < 1e-15:
            break
        th = th_new
    h = th * rec.h
    if h > 0.0:
        y, _, _, _ = dopri_step(field, rec.y0, rec.f0, h)
    return rec.t0 + h, y


def first_hit(
    field,
    space: AmbientSpace,
    x0,
    sections: Sequence[SectionPatch],
    t_max: float,
    tol: float = 1e-9,
    event_tol: float = 1e-8,
    max_step: float = 0.25,
    burn_in: float = 0.0,
    directions: Sequence[int] | None = None,
    record: list | None = None,
    warnings_out: list | None = None,
):
    """Earliest contained, transversal crossing of any of ``sections``.

    Returns a :class:`HitResult` (with ``section_index``) or None when
    nothing is hit before ``t_max``. Accepted steps are appended to
    ``record`` when given. ``burn_in`` is a time, or one time per section,
    before which crossings are ignored.
    """
    x0 = np.asarray(x0, dtype=float)
    directions = [0] * len(sections) if directions is None else list(directions)
    burn = list(burn_in) if np.ndim(burn_in) else [float(burn_in)] * len(sections)
    # a start on a section needs a positive burn-in before detection
    for j, sec in enumerate(sections):
        if abs(float(sec.g(x0))) <= sec.tol:
            burn[j] = max(burn[j], 1e4 * event_tol, 1e-6)
    found: list[HitResult] = []
    gprev = [float(sec.g(x0)) for sec in sections]

    def on_step(rec: StepRecord) -> bool:
        if record is not None:
            record.append(rec)
        t1 = rec.t0 + rec.h
        hits = []
        for j, sec in enumerate(sections):
            if sec.wraps:
                gfun = sec.local_g(rec.dense(0.5))
                g0, g1 = float(gfun(rec.y0)), float(gfun(rec.y1))
            else:
                gfun = sec.g
                g0 = gprev[j]
                g1 = float(sec.g(rec.y1))
                gprev[j] = g1
            if t1 <= burn[j] or not _crossed(g0, g1, directions[j]):
                continue
            # cheap plausibility check on the secant estimate before refining
            est = rec.y0 + (rec.y1 - rec.y0) * (g0 / (g0 - g1))
            pad = float(np.linalg.norm(rec.y1 - rec.y0)) + 10 * sec.tol
            if abs(float(sec.offset(est))) > pad or not sec.in_rect(sec.to_chart(est), pad):
                continue
            tc, yc = _locate(field, rec, sec, event_tol, gfun)
            if tc <= burn[j]:
                continue
            yc = _post_step(space, yc)
            if abs(float(sec.offset(yc))) > max(sec.tol, 1e3 * event_tol):
                continue
            u = sec.to_chart(yc)
            if not sec.in_rect(u):
                continue
            tv = float(sec.grad_g(yc) @ field(yc))
            if abs(tv) < sec.transversality_floor:
                msg = f"tangential crossing of {sec.name or 'section'} at t={tc:.6g} (|X.grad g|={abs(tv):.3g})"
                if warnings_out is not None:
                    warnings_out.append(msg)
                warnings.warn(msg, TangencyWarning, stacklevel=3)
                continue
            hits.append(HitResult(tc, yc, tv, sec.is_interior(u), u, j))
        if hits:
            found.append(min(hits, key=lambda h: h.time))
            return True
        return False

    integrate(field, space, x0, t_max, tol=tol, max_step=max_step, on_step=on_step)
    return found[0] if found else None


def first_hitting_time(
    field,
    space: AmbientSpace,
    x0,
    section: SectionPatch,
    t_max: float = 200.0,
    tol: float = 1e-9,
    event_tol: float = 1e-8,
    max_step: float = 0.25,
    burn_in: float = 0.0,
):
    """tau_1: first time the flow from ``x0`` meets ``section``; None if not before ``t_max``."""
    return first_hit(
        field, space, x0, [section], t_max, tol=tol, event_tol=event_tol, max_step=max_step, burn_in=burn_in
    )


def c0_distance_fields(X, Y, space: AmbientSpace, n_samples: int = 4096, seed: int = 0, extra_points=None) -> float:
    """Sampled ``max ||X(p) - Y(p)||`` over a scrambled Sobol sample.

    Nested prefixes of the same sequence are used, so the value is
    non-decreasing in ``n_samples``. ``extra_points`` (e.g. perturbation
    centers) are always included.
    """
    pts = space.sample(n_samples, seed=seed)
    if extra_points is not None:
        pts = np.vstack([pts, np.atleast_2d(np.asarray(extra_points, dtype=float))])
    diff = X(pts) - Y(pts)
    return float(np.max(np.linalg.norm(diff, axis=-1)))
