"""Fixed-point index of planar maps from the winding number of ``f(x) - x``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AngleJump, DimensionUnsupported, FixedPointOnBoundary, OrbitNotFound

__all__ = [
    "IndexResult",
    "winding_number",
    "fixed_point_index",
    "index_stability_margin",
    "locate_fixed_point",
    "return_chart_map",
    "index_of_orbit",
]

MARGIN_FACTOR = 1e-7


@dataclass(frozen=True)
class IndexResult:
    index: int
    margin: float
    case: str
    samples: int
    winding_total: float = 0.0


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def winding_number(f: Callable, curve: Callable, n0: int = 32, max_samples: int = 4096, min_gap: float = 0.0):
    """Winding of ``v(s) = f(curve(s)) - curve(s)`` around 0 for ``s`` in ``[0, 1)``.

    Segments whose angle increment reaches pi/2 are bisected until every
    increment is below pi/2. Returns ``(winding, total_angle, margin, samples)``.
    Raises :class:`FixedPointOnBoundary` when ``|v|`` falls to ``min_gap``
    and :class:`AngleJump` when the sample budget runs out.
    """
    s = list(np.linspace(0.0, 1.0, n0, endpoint=False))
    cache = {}

    def v(si):
        if si not in cache:
            x = curve(si)
            d = np.asarray(f(x), dtype=float) - x
            nd = float(np.hypot(d[0], d[1]))
            if nd <= min_gap:
                raise FixedPointOnBoundary(nd)
            cache[si] = (float(np.arctan2(d[1], d[0])), nd)
        return cache[si]

    total = 0.0
    # walk the loop; the stack top is the next parameter value
    stack = (s[1:] + [1.0])[::-1]
    cur = s[0]
    while stack:
        nxt = stack[-1]
        a0 = v(cur)[0]
        a1 = v(nxt % 1.0)[0]
        inc = _wrap_angle(a1 - a0)
        # the slack keeps a wrapped 3pi/2 (rounded to just under pi/2) from passing
        if abs(inc) >= np.pi / 2 - 1e-9:
            mid = 0.5 * (cur + nxt)
            if len(cache) >= max_samples or not cur < mid < nxt:
                raise AngleJump(f"winding refinement exceeded {max_samples} samples or float resolution")
            stack.append(mid)
            continue
        total += inc
        cur = stack.pop()
    margin = min(nd for _, nd in cache.values())
    w = int(round(total / (2 * np.pi)))
    if abs(total - 2 * np.pi * w) > 1e-6:  # pragma: no cover - closed loop sums to a multiple of 2pi
        raise AngleJump(f"winding total {total} is not a multiple of 2pi")
    return w, total, margin, len(cache)


def _circle(center, radius):
    c = np.asarray(center, dtype=float)

    def curve(s):
        a = 2 * np.pi * s
        return c + radius * np.array([np.cos(a), np.sin(a)])

    return curve


def _square(center, half):
    c = np.asarray(center, dtype=float)
    corners = c + half * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [-1, -1]], dtype=float)

    def curve(s):
        q = 4.0 * (s % 1.0)
        j = min(int(q), 3)
        t = q - j
        return corners[j] + t * (corners[j + 1] - corners[j])

    return curve


def fixed_point_index(
    f: Callable, center, radius: float, n_boundary: int = 32, max_samples: int = 4096, n_disk: int = 24
) -> IndexResult:
    """Index of ``f`` on the closed disk ``B(center, radius)``.

    ``f(B) \\cap B`` empty (sampled) gives index 0; otherwise the index is
    the winding number of ``f(x) - x`` along the boundary circle.
    """
    c = np.asarray(center, dtype=float)
    if c.shape != (2,):
        raise DimensionUnsupported("fixed-point index is implemented for planar maps")
    if radius <= 0:
        raise ValueError("radius must be positive")
    gap = MARGIN_FACTOR * radius
    fc = np.asarray(f(c), dtype=float)
    if np.linalg.norm(fc - c) > radius:
        # image of the center is outside B; check the whole disk
        r = np.sqrt(np.linspace(0.0, 1.0, n_disk)) * radius
        a = np.linspace(0.0, 2 * np.pi, 2 * n_disk, endpoint=False)
        P = c + np.stack([np.outer(r, np.cos(a)).ravel(), np.outer(r, np.sin(a)).ravel()], axis=1)
        img = np.array([f(p) for p in P])
        d_img = np.linalg.norm(img - c, axis=1) - radius
        if d_img.min() > 0.0:
            bd = np.linalg.norm(img - P, axis=1)
            on_bd = np.isclose(np.linalg.norm(P - c, axis=1), radius)
            return IndexResult(0, float(bd[on_bd].min()), "disjoint", len(P) + 1, 0.0)
    w, total, margin, n = winding_number(f, _circle(c, radius), n_boundary, max_samples, gap)
    return IndexResult(w, margin, "degree", n + 1, total)


def index_stability_margin(f: Callable, center, radius: float, n_boundary: int = 32) -> float:
    """Boundary margin ``min |f(x) - x|`` on the circle; maps closer than this share the index."""
    return fixed_point_index(f, center, radius, n_boundary).margin


def locate_fixed_point(
    f: Callable, center, radius: float, depth: int = 60, tol: float = 1e-6, n_boundary: int = 16
) -> np.ndarray:
    """A point ``p`` of the square around the disk with ``|f(p) - p| <= tol``.

    Quadtree search: squares whose boundary winding is nonzero are split
    and their children examined; a square whose boundary passes through a
    near-fixed point is nudged before retrying.
    """
    c = np.asarray(center, dtype=float)
    best = [np.inf, c]

    def g(x):
        y = np.asarray(f(x), dtype=float)
        r = float(np.linalg.norm(y - x))
        if r < best[0]:
            best[0], best[1] = r, np.array(x, dtype=float)
        return y

    def wind(ctr, half):
        try:
            return winding_number(g, _square(ctr, half), n_boundary, 4096, 0.0)[0]
        except FixedPointOnBoundary:
            return None
        except AngleJump:
            return None

    g(c)
    stack = [(c, float(radius), 0)]
    while stack:
        if best[0] <= tol:
            return best[1]
        ctr, half, lev = stack.pop()
        if lev > depth:
            continue
        w = wind(ctr, half)
        if best[0] <= tol:
            return best[1]
        if w is None:
            # fixed point on (or very near) this boundary: shift the square slightly
            stack.append((ctr + 0.013 * half, half * 1.01, lev + 1))
            continue
        if w == 0 and lev > 0:
            continue
        h2 = half / 2
        kids = [(ctr + h2 * np.array([dx, dy]), h2, lev + 1) for dx in (-1, 1) for dy in (-1, 1)]
        # the child holding the best point so far is examined first
        kids.sort(key=lambda item: float(np.max(np.abs(best[1] - item[0])) <= item[1]))
        stack.extend(kids)
    if best[0] <= tol:
        return best[1]
    raise OrbitNotFound(f"no fixed point located to {tol:g} (best residual {best[0]:.3g})", best=best[1], residual=best[0])


def return_chart_map(system, orbit):
    """The orbit's k-fold return map in section chart coordinates."""
    from .poincare import _iterate

    sec = orbit.section
    patch = system.D_hat if sec is None else sec

    def f(u):
        return _iterate(system, sec, orbit.k if sec is None else orbit.returns, np.asarray(u, dtype=float))[0]

    return f, patch


def index_of_orbit(system, orbit, radius: float, n_boundary: int = 16) -> int:
    """Fixed-point index of the orbit's return map on a chart disk around the representative."""
    if system.space.coord_dim != 3 or system.space.dimension != 3:
        raise DimensionUnsupported("orbit index needs 2-dimensional sections (d = 3)")
    f, patch = return_chart_map(system, orbit)
    u0 = patch.to_chart(orbit.representative)
    return fixed_point_index(f, u0, radius, n_boundary).index
