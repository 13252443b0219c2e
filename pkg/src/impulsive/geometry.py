"""Ambient spaces, cross-section patches and impulse maps."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import InverseFailed, OutsidePatch
from .profiles import BUMP_SLOPE, PLATEAU_RADIAL_MAX, PLATEAU_SLOPE, bump, plateau

__all__ = [
    "AmbientSpace",
    "SectionPatch",
    "Bump",
    "Impulse",
    "Check",
    "ValidationReport",
    "hausdorff_distance",
    "set_distance",
]

SPACE_KINDS = ("euclidean-box", "flat-torus", "implicit-surface")


@dataclass(frozen=True)
class AmbientSpace:
    """The manifold the flow lives on.

    Points are always stored in ambient coordinates of R^n: the box and the
    torus use their own dimension, the implicit surface (a sphere of
    ``radius``) lives in R^3 with intrinsic dimension 2.
    """

    kind: str
    dimension: int
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    periods: tuple[float, ...] | None = None
    radius: float | None = None
    surface_tol: float = 1e-10

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.dimension < 2:
            raise ValueError("dimension must be at least 2")
        if self.kind == "euclidean-box" and (self.lower is None or self.upper is None):
            raise ValueError("box needs lower and upper bounds")
        if self.kind == "flat-torus" and self.periods is None:
            raise ValueError("torus needs periods")
        if self.kind == "implicit-surface" and self.radius is None:
            raise ValueError("implicit surface needs a sphere radius")

    @classmethod
    def box(cls, lower, upper):
        return cls("euclidean-box", len(lower), lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @classmethod
    def torus(cls, periods):
        return cls("flat-torus", len(periods), periods=tuple(map(float, periods)))

    @classmethod
    def sphere(cls, radius: float = 1.0):
        return cls("implicit-surface", 2, radius=float(radius))

    @property
    def coord_dim(self) -> int:
        return 3 if self.kind == "implicit-surface" else self.dimension

    @cached_property
    def _period_array(self):
        return None if self.periods is None else np.asarray(self.periods, dtype=float)

    def surface_value(self, p):
        """The constraint g_M; zero on the surface (implicit kind only)."""
        p = np.asarray(p, dtype=float)
        return np.sum(p * p, axis=-1) - self.radius**2

    def displacement(self, a, b):
        """``b - a``, using the minimal representative on the torus."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.kind == "flat-torus":
            L = self._period_array
            d = d - L * np.round(d / L)
        return d

    def distance(self, a, b):
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def reduce(self, p):
        """Canonical representative: wrap on the torus, project on the surface."""
        p = np.asarray(p, dtype=float)
        if self.kind == "flat-torus":
            return np.mod(p, self._period_array)
        if self.kind == "implicit-surface":
            return self.project(p)
        return p

    def project(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind != "implicit-surface":
            return p
        n = np.linalg.norm(p, axis=-1, keepdims=True)
        return p * (self.radius / n)

    def surface_normal(self, p):
        p = np.asarray(p, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def inside(self, p) -> bool:
        if self.kind != "euclidean-box":
            return True
        lo, hi = self._bounds
        return bool(((p >= lo) & (p <= hi)).all())

    @cached_property
    def _bounds(self):
        return np.asarray(self.lower) - 1e-12, np.asarray(self.upper) + 1e-12

    def sample(self, n: int, seed: int = 0):
        """Deterministic low-discrepancy sample of the space (scrambled Sobol)."""
        from scipy.stats import qmc

        if self.kind == "implicit-surface":
            # Fibonacci lattice on the sphere
            i = np.arange(n) + 0.5
            z = 1.0 - 2.0 * i / n
            phi = np.pi * (1.0 + 5**0.5) * i
            r = np.sqrt(1.0 - z * z)
            return self.radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        u = qmc.Sobol(self.dimension, scramble=True, seed=seed).random(n)
        if self.kind == "flat-torus":
            return u * self._period_array
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + u * (hi - lo)

    @property
    def diameter(self) -> float:
        if self.kind == "flat-torus":
            return float(np.linalg.norm(self._period_array) / 2)
        if self.kind == "implicit-surface":
            return 2.0 * self.radius
        return float(np.linalg.norm(np.asarray(self.upper) - np.asarray(self.lower)))


@dataclass(frozen=True)
class SectionPatch:
    """A compact chart patch of a codimension-one section.

    ``kind="plane"``: the affine chart ``u -> origin + basis.T @ u`` with unit
    ``normal``. On a torus an axis-aligned normal gives the smooth periodic
    section function ``(L/2pi) sin(2pi n.(p-o)/L)``; any other normal uses the
    minimal-image offset, which is only meaningful near the patch (small
    local sections).

    ``kind="latitude"``: the circle ``z = height`` on a sphere, charted by
    longitude.

    A point is on the patch only if it is within ``tol`` of the hypersurface
    AND its chart coordinates lie in the rectangle; a zero of the section
    function alone is not enough.
    """

    kind: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    basis: tuple[tuple[float, ...], ...] | None = None
    normal: tuple[float, ...] | None = None
    height: float | None = None
    sphere_radius: float | None = None
    periods: tuple[float, ...] | None = None
    margin: float = 1e-3
    transversality_floor: float = 1e-3
    tol: float = 1e-6
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("plane", "latitude"):
            raise ValueError(f"unknown patch kind {self.kind!r}")
        if len(self.lower) != len(self.upper):
            raise ValueError("chart rectangle bounds differ in length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("empty chart rectangle")
        if self.kind == "plane":
            B = np.asarray(self.basis, dtype=float)
            n = np.asarray(self.normal, dtype=float)
            if B.shape != (len(self.lower), n.size):
                raise ValueError("basis shape does not match chart/ambient dimensions")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def plane(cls, origin, basis, lower, upper, *, periods=None, **kw):
        B = np.asarray(basis, dtype=float)
        n = _complement_normal(B)
        return cls(
            "plane",
            tuple(map(float, lower)),
            tuple(map(float, upper)),
            origin=tuple(map(float, origin)),
            basis=tuple(tuple(map(float, row)) for row in B),
            normal=tuple(map(float, n)),
            periods=None if periods is None else tuple(map(float, periods)),
            **kw,
        )

    @classmethod
    def latitude(cls, height, lower, upper, *, sphere_radius=1.0, **kw):
        return cls(
            "latitude",
            (float(lower),),
            (float(upper),),
            height=float(height),
            sphere_radius=float(sphere_radius),
            **kw,
        )

    @property
    def chart_dim(self) -> int:
        return len(self.lower)

    @cached_property
    def _lo(self):
        return np.asarray(self.lower, dtype=float)

    @cached_property
    def _hi(self):
        return np.asarray(self.upper, dtype=float)

    @cached_property
    def _o(self):
        return np.asarray(self.origin, dtype=float)

    @cached_property
    def _B(self):
        return np.asarray(self.basis, dtype=float)

    @cached_property
    def _n(self):
        return np.asarray(self.normal, dtype=float)

    @cached_property
    def _axis_period(self):
        if self.periods is None or np.count_nonzero(np.abs(self._n) > 1e-12) != 1:
            return None
        k = int(np.argmax(np.abs(self._n)))
        return float(self.periods[k])

    def _disp(self, p):
        d = np.asarray(p, dtype=float) - self._o
        if self.periods is not None:
            L = np.asarray(self.periods)
            d = d - L * np.round(d / L)
        return d

    # -- section function -----------------------------------------------------
    def g(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "latitude":
            return p[..., 2] - self.height
        if self.periods is None:
            return (p - self._o) @ self._n
        L = self._axis_period
        if L is None:
            return self._disp(p) @ self._n
        s = (p - self._o) @ self._n
        return L / (2 * np.pi) * np.sin(2 * np.pi * s / L)

    @property
    def wraps(self) -> bool:
        """True when ``g`` is only piecewise continuous (oblique plane on a torus)."""
        return self.periods is not None and self.kind == "plane" and self._axis_period is None

    def local_g(self, ref):
        """A continuous section function near ``ref`` (the plane image closest to ``ref``)."""
        if not self.wraps:
            return self.g
        ref = np.asarray(ref, dtype=float)
        shift = ref - self._disp(ref) - self._o
        o = self._o + shift

        def g(p):
            return (np.asarray(p, dtype=float) - o) @ self._n

        return g

    def grad_g(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "latitude":
            out = np.zeros(p.shape)
            out[..., 2] = 1.0
            return out
        L = self._axis_period
        if L is None:
            return np.broadcast_to(self._n, p.shape).copy()
        s = (p - self._o) @ self._n
        return np.cos(2 * np.pi * s / L)[..., None] * self._n

    # -- chart ----------------------------------------------------------------
    def to_chart(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "latitude":
            return np.arctan2(p[..., 1], p[..., 0])[..., None]
        return self._disp(p) @ self._B.T

    def from_chart(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "latitude":
            rho = np.sqrt(self.sphere_radius**2 - self.height**2)
            lam = u[..., 0]
            return np.stack([rho * np.cos(lam), rho * np.sin(lam), np.full(lam.shape, self.height)], axis=-1)
        p = self._o + u @ self._B
        if self.periods is not None:
            p = np.mod(p, np.asarray(self.periods))
        return p

    def offset(self, p):
        """Signed distance-like offset from the hypersurface."""
        p = np.asarray(p, dtype=float)
        if self.kind == "latitude":
            return p[..., 2] - self.height
        return self._disp(p) @ self._n

    def in_rect(self, u, pad: float = 0.0):
        u = np.asarray(u, dtype=float)
        return np.all((u >= self._lo - pad) & (u <= self._hi + pad), axis=-1)

    def contains(self, p, tol: float | None = None):
        tol = self.tol if tol is None else tol
        return np.abs(self.offset(p)) <= tol and bool(self.in_rect(self.to_chart(p)))

    def is_interior(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u - self._lo >= self.margin) and np.all(self._hi - u >= self.margin))

    def boundary_gap(self, u) -> float:
        """Chart distance from ``u`` to the rectangle boundary (negative outside)."""
        u = np.asarray(u, dtype=float)
        return float(np.min(np.minimum(u - self._lo, self._hi - u)))

    def clamp(self, u, inset: float = 0.0):
        return np.clip(np.asarray(u, dtype=float), self._lo + inset, self._hi - inset)

    def chart_grid(self, n: int, inset: float = 0.0):
        axes = [np.linspace(lo + inset, hi - inset, n) for lo, hi in zip(self._lo, self._hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def grid(self, n: int, inset: float = 0.0):
        """Ambient points of an ``n^(d-1)`` chart grid."""
        return self.from_chart(self.chart_grid(n, inset))

    @property
    def center(self):
        return self.from_chart((self._lo + self._hi) / 2)

    @property
    def chart_size(self) -> float:
        return float(np.min(self._hi - self._lo))


def _complement_normal(B):
    """Unit normal to the row span of ``B`` (rows = tangent vectors)."""
    m, n = B.shape
    if m != n - 1:
        raise ValueError("a codimension-one patch needs d-1 basis vectors")
    _, _, vt = np.linalg.svd(B)
    v = vt[-1]
    if n == 3:
        v = np.cross(B[0], B[1])
    elif n == 2:
        v = np.array([-B[0][1], B[0][0]])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Bump:
    """A compactly supported homeomorphism of a chart, identity outside the ball.

    ``kind="shift"``: ``w + displacement * bump(|w - c| / radius)``; injective
    because its displacement Lipschitz constant is below one.
    ``kind="contract"``: ``c + (1 - rate * plateau(|w - c| / radius)) (w - c)``;
    injective because the radial profile is increasing for ``rate < 1``.
    """

    center: tuple[float, ...]
    radius: float
    kind: str = "shift"
    displacement: tuple[float, ...] | None = None
    rate: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        if self.kind == "shift":
            if self.displacement is None:
                raise ValueError("shift bump needs a displacement")
            if self.lipschitz >= 1.0:
                raise ValueError(f"shift bump not injective: Lipschitz {self.lipschitz:.3g} >= 1")
        elif self.kind == "contract":
            if not 0.0 <= self.rate < 1.0:
                raise ValueError("contraction rate must lie in [0, 1)")
        else:
            raise ValueError(f"unknown bump kind {self.kind!r}")

    @cached_property
    def _c(self):
        return np.asarray(self.center, dtype=float)

    @cached_property
    def _v(self):
        return np.asarray(self.displacement, dtype=float)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of the displacement ``zeta - id``."""
        if self.kind == "shift":
            return float(np.linalg.norm(self.displacement)) * BUMP_SLOPE / self.radius
        return self.rate * (1.0 + 0.5 * PLATEAU_SLOPE)

    @property
    def co_lipschitz(self) -> float:
        """Lower bound of ``|zeta(a) - zeta(b)| / |a - b|``."""
        if self.kind == "shift":
            return 1.0 - self.lipschitz
        return 1.0 - self.rate

    @property
    def c0_size(self) -> float:
        if self.kind == "shift":
            return float(np.linalg.norm(self.displacement))
        return self.rate * self.radius * PLATEAU_RADIAL_MAX

    def forward(self, w):
        d = w - self._c
        s = np.linalg.norm(d) / self.radius
        if s >= 1.0:
            return w
        if self.kind == "shift":
            return w + self._v * float(bump(s))
        return self._c + (1.0 - self.rate * float(plateau(s))) * d

    def backward(self, q, tol: float = 1e-14, max_iter: int = 1000):
        d = q - self._c
        if np.linalg.norm(d) >= self.radius:
            return q
        if self.kind == "contract":
            rho_out = float(np.linalg.norm(d))
            if rho_out == 0.0:
                return q.copy()
            lo, hi = rho_out, min(rho_out / (1.0 - self.rate), self.radius)
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                val = mid * (1.0 - self.rate * float(plateau(mid / self.radius)))
                if val < rho_out:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < tol * max(1.0, self.radius):
                    break
            return self._c + d * (0.5 * (lo + hi) / rho_out)
        w = q.copy()
        for _ in range(max_iter):
            w_new = q - self._v * float(bump(np.linalg.norm(w - self._c) / self.radius))
            if np.linalg.norm(w_new - w) <= tol:
                return w_new
            w = w_new
        raise InverseFailed("shift-bump inversion did not converge")

    def to_dict(self) -> dict:
        out = {"center": list(self.center), "radius": self.radius, "kind": self.kind}
        if self.kind == "shift":
            out["displacement"] = list(self.displacement)
        else:
            out["rate"] = self.rate
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Bump":
        disp = d.get("displacement")
        return cls(
            center=tuple(map(float, d["center"])),
            radius=float(d["radius"]),
            kind=d.get("kind", "shift"),
            displacement=None if disp is None else tuple(map(float, disp)),
            rate=float(d.get("rate", 0.0)),
        )


@dataclass(frozen=True)
class Impulse:
    """The jump map ``I: D -> D_hat``.

    In chart coordinates ``I = zeta_m o ... o zeta_1 o (u -> A u + b)`` where
    each ``zeta_j`` is a :class:`Bump` of the target chart. Post-composing a
    perturbation ``zeta`` (``J = zeta o I``) appends bumps.
    """

    source: SectionPatch
    target: SectionPatch
    matrix: tuple[tuple[float, ...], ...]
    offset: tuple[float, ...]
    bumps: tuple[Bump, ...] = ()
    inverse_tol: float = 1e-12

    @classmethod
    def affine(cls, source, target, matrix=None, offset=None, bumps=()):
        m = source.chart_dim
        A = np.eye(m) if matrix is None else np.asarray(matrix, dtype=float)
        b = np.zeros(m) if offset is None else np.asarray(offset, dtype=float)
        return cls(
            source,
            target,
            tuple(tuple(map(float, r)) for r in A),
            tuple(map(float, b)),
            tuple(bumps),
        )

    @cached_property
    def _A(self):
        return np.asarray(self.matrix, dtype=float)

    @cached_property
    def _Ainv(self):
        return np.linalg.inv(self._A)

    @cached_property
    def _b(self):
        return np.asarray(self.offset, dtype=float)

    @cached_property
    def _bump_arrays(self):
        if not self.bumps:
            return np.zeros((0, self.source.chart_dim)), np.zeros(0)
        return (
            np.array([bp.center for bp in self.bumps], dtype=float),
            np.array([bp.radius for bp in self.bumps], dtype=float),
        )

    def then(self, *bumps: Bump) -> "Impulse":
        """``zeta o I`` for the composition of the given bumps."""
        return replace(self, bumps=self.bumps + tuple(bumps))

    @property
    def base(self) -> "Impulse":
        return replace(self, bumps=())

    # -- chart level ----------------------------------------------------------
    def chart_apply(self, u):
        w = self._A @ np.asarray(u, dtype=float) + self._b
        return self.apply_bumps(w)

    def apply_bumps(self, w):
        n = len(self.bumps)
        if n == 0:
            return w
        C, R = self._bump_arrays
        j = 0
        while j < n:
            gap = np.linalg.norm(C[j:] - w, axis=1) - R[j:]
            hits = np.flatnonzero(gap < 0.0)
            if hits.size == 0:
                break
            k = j + int(hits[0])
            w = self.bumps[k].forward(w)
            j = k + 1
        return w

    def chart_inverse(self, w):
        w = np.asarray(w, dtype=float).copy()
        n = len(self.bumps)
        if n:
            C, R = self._bump_arrays
            j = n - 1
            while j >= 0:
                gap = np.linalg.norm(C[: j + 1] - w, axis=1) - R[: j + 1]
                hits = np.flatnonzero(gap < 0.0)
                if hits.size == 0:
                    break
                k = int(hits[-1])
                w = self.bumps[k].backward(w, tol=self.inverse_tol * 1e-2)
                j = k - 1
        return self._Ainv @ (w - self._b)

    # -- ambient level ----------------------------------------------------------
    def apply(self, p):
        p = np.asarray(p, dtype=float)
        if not self.source.contains(p, tol=max(self.source.tol, 1e-6)):
            raise OutsidePatch(f"point {p} is not on the impulsive region")
        return self.target.from_chart(self.chart_apply(self.source.to_chart(p)))

    def inverse(self, q):
        q = np.asarray(q, dtype=float)
        if not self.target.contains(q, tol=max(self.target.tol, 1e-6)):
            raise OutsidePatch(f"point {q} is not on the landing section")
        u = self.chart_inverse(self.target.to_chart(q))
        if np.linalg.norm(self.chart_apply(u) - self.target.to_chart(q)) > max(self.inverse_tol, 1e-10):
            raise InverseFailed("impulse inverse round trip exceeds tolerance")
        return self.source.from_chart(u)

    @property
    def displacement_lipschitz(self) -> float:
        """Largest per-bump displacement Lipschitz constant (shift bumps)."""
        shifts = [bp.lipschitz for bp in self.bumps if bp.kind == "shift"]
        return max(shifts, default=0.0)

    @property
    def co_lipschitz(self) -> float:
        """Lower bound on chart separation ratio ``|I(a)-I(b)| / |a-b|``."""
        smin = float(np.linalg.svd(self._A, compute_uv=False).min())
        return smin * float(np.prod([bp.co_lipschitz for bp in self.bumps])) if self.bumps else smin

    @property
    def c0_perturbation(self) -> float:
        """Upper bound of ``d_C0(zeta, id)`` from the bump sizes."""
        return float(sum(bp.c0_size for bp in self.bumps))


# -- set distances -------------------------------------------------------------
def _tree(points, space):
    points = np.asarray(points, dtype=float)
    if space is not None and space.kind == "flat-torus":
        L = np.asarray(space.periods)
        return cKDTree(np.mod(points, L), boxsize=L), L
    return cKDTree(points), None


def _one_sided(A, B, space):
    tree, L = _tree(B, space)
    A = np.asarray(A, dtype=float)
    if L is not None:
        A = np.mod(A, L)
    d, _ = tree.query(A)
    return d


def hausdorff_distance(A, B, space: AmbientSpace | None = None) -> float:
    """``max(sup_a dist(a, B), sup_b dist(b, A))`` for finite samples."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("hausdorff_distance needs two nonempty point sets")
    return float(max(_one_sided(A, B, space).max(), _one_sided(B, A, space).max()))


def set_distance(A, B, space: AmbientSpace | None = None) -> float:
    """``inf_{a, b} dist(a, b)`` for finite samples."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("set_distance needs two nonempty point sets")
    return float(_one_sided(A, B, space).min())


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "detail": c.detail} for c in self.checks
            ],
        }
