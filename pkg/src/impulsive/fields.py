"""Lipschitz vector fields: polynomial base fields plus localized perturbation terms."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from math import sqrt

import numpy as np

from .profiles import bump, plateau, window

__all__ = [
    "Polynomial",
    "BlobTerm",
    "TubeTerm",
    "PolynomialTerm",
    "VectorFieldSpec",
    "BUILTIN_FIELDS",
    "builtin_field",
]

Monomial = tuple[tuple[int, ...], float]


@dataclass(frozen=True)
class Polynomial:
    """Vector polynomial; ``components[i]`` lists ``(exponents, coefficient)`` pairs."""

    components: tuple[tuple[Monomial, ...], ...]

    @classmethod
    def constant(cls, v):
        n = len(v)
        return cls(tuple((((0,) * n, float(c)),) if c else () for c in v))

    @cached_property
    def _compiled(self):
        """Evaluation compiled to straight-line numpy code (monomials are few and low degree)."""
        n = len(self.components)
        comps = []
        for comp in self.components:
            terms = []
            for e, c in comp:
                factors = [repr(float(c))]
                for j, k in enumerate(e):
                    if k == 1:
                        factors.append(f"p[..., {j}]")
                    elif k > 1:
                        factors.append(f"p[..., {j}] ** {int(k)}")
                terms.append(" * ".join(factors))
            comps.append(" + ".join(terms) if terms else None)
        lines = ["def _f(p):", "    out = np.zeros(p.shape)"]
        for i, expr in enumerate(comps):
            if expr is not None:
                lines.append(f"    out[..., {i}] = {expr}")
        lines.append("    return out")
        ns = {"np": np}
        exec("\n".join(lines), ns)
        if n == 0:
            raise ValueError("empty polynomial")
        return ns["_f"]

    def __call__(self, p):
        return self._compiled(np.asarray(p, dtype=float))

    def to_list(self):
        return [[[list(e), c] for e, c in comp] for comp in self.components]

    @classmethod
    def from_list(cls, data):
        return cls(tuple(tuple((tuple(int(x) for x in e), float(c)) for e, c in comp) for comp in data))


BUILTIN_FIELDS = ("cylinder-rotation", "torus-constant", "north-south-sphere")


def builtin_field(name: str, params=None) -> Polynomial:
    if name == "cylinder-rotation":
        return Polynomial(((((0, 1, 0), -1.0),), (((1, 0, 0), 1.0),), ()))
    if name == "torus-constant":
        v = (1.0, sqrt(2.0), sqrt(3.0)) if params is None else tuple(map(float, params))
        return Polynomial.constant(v)
    if name == "north-south-sphere":
        return Polynomial(
            (
                (((1, 0, 1), 1.0),),
                (((0, 1, 1), 1.0),),
                (((2, 0, 0), -1.0), ((0, 2, 0), -1.0)),
            )
        )
    raise ValueError(f"unknown builtin field {name!r}")


def _wrap(d, periods):
    if periods is None:
        return d
    L = np.asarray(periods)
    return d - L * np.round(d / L)


@dataclass(frozen=True)
class PolynomialTerm:
    """Global additive polynomial term (e.g. a radial damping)."""

    polynomial: Polynomial
    label: str = "polynomial"
    kind: str = field(default="polynomial", init=False)

    def __call__(self, p):
        return self.polynomial(p)

    def to_dict(self):
        return {"kind": "polynomial", "label": self.label, "polynomial": self.polynomial.to_list()}


@dataclass(frozen=True)
class BlobTerm:
    """``vector * bump(|x - center| / radius)``."""

    center: tuple[float, ...]
    radius: float
    vector: tuple[float, ...]
    periods: tuple[float, ...] | None = None
    label: str = "blob"
    kind: str = field(default="blob", init=False)

    @property
    def c0_size(self) -> float:
        return float(np.linalg.norm(self.vector))

    @cached_property
    def cull_points(self):
        return np.asarray(self.center, dtype=float)[None, :], np.array([self.radius])

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        d = _wrap(p - np.asarray(self.center), self.periods)
        s = np.linalg.norm(d, axis=-1) / self.radius
        return bump(s)[..., None] * np.asarray(self.vector)

    def to_dict(self):
        return {
            "kind": "blob",
            "label": self.label,
            "center": list(self.center),
            "radius": self.radius,
            "vector": list(self.vector),
            "periods": None if self.periods is None else list(self.periods),
        }


@dataclass(frozen=True)
class TubeTerm:
    """Perturbation supported in a tube around an orbit segment.

    The axis is the cubic Hermite curve through orbit samples (continuous,
    unwrapped coordinates) with flow times ``times`` starting at 0;
    ``length`` is the segment duration. A query point is located by its
    nearest axis foot point, giving a longitudinal time ``s`` and a
    transversal offset ``z``.

    ``mode="push"``: ``window(s) * plateau(|z| / ball) * u_perp`` moves a
    stream entering the tube within ``ball/3`` of the axis by
    ``(integral of the window) * u``.

    ``mode="contract"``: ``-eta * window(s) * eta * plateau(|z| / ball) * z``,
    a transversal linear contraction whose longitudinal and transversal
    profiles both equal ``eta`` on their plateaus.
    """

    axis: tuple[tuple[float, ...], ...]
    times: tuple[float, ...]
    length: float
    ramp: float
    ball: float
    mode: str = "push"
    vector: tuple[float, ...] | None = None
    eta: float = 0.0
    periods: tuple[float, ...] | None = None
    label: str = "tube"

    @property
    def kind(self) -> str:
        return "tube"

    @cached_property
    def _axis(self):
        return np.asarray(self.axis, dtype=float)

    @cached_property
    def _times(self):
        return np.asarray(self.times, dtype=float)

    @cached_property
    def cull_points(self):
        return self._axis, np.full(len(self._axis), 0.5 * self.ball + self._max_gap)

    @cached_property
    def _max_gap(self):
        return float(np.max(np.linalg.norm(np.diff(self._axis, axis=0), axis=1)))

    @property
    def support_radius(self) -> float:
        return 0.5 * self.ball

    @property
    def c0_size(self) -> float:
        if self.mode == "push":
            return float(np.linalg.norm(self.vector))
        # max over |z| <= ball/2 of eta^2 * plateau(|z|/ball) * |z|
        from .profiles import PLATEAU_RADIAL_MAX

        return self.eta**2 * self.ball * PLATEAU_RADIAL_MAX

    @cached_property
    def _slopes(self):
        # centred differences; the axis is a cubic Hermite curve through the samples
        A, T = self._axis, self._times
        m = np.empty_like(A)
        m[1:-1] = (A[2:] - A[:-2]) / (T[2:] - T[:-2])[:, None]
        m[0] = (A[1] - A[0]) / (T[1] - T[0])
        m[-1] = (A[-1] - A[-2]) / (T[-1] - T[-2])
        return m

    def _curve(self, s):
        """Axis point, first and second derivative at times ``s``."""
        A, T, M = self._axis, self._times, self._slopes
        j = np.clip(np.searchsorted(T, s, side="right") - 1, 0, len(T) - 2)
        h = (T[j + 1] - T[j])[:, None]
        t = ((s - T[j]) / (T[j + 1] - T[j]))[:, None]
        p0, p1, m0, m1 = A[j], A[j + 1], M[j] * h, M[j + 1] * h
        t2, t3 = t * t, t * t * t
        c = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1
        d1 = ((6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1 + (3 * t2 - 2 * t) * m1) / h
        d2 = ((12 * t - 6) * p0 + (6 * t - 4) * m0 + (-12 * t + 6) * p1 + (6 * t - 2) * m1) / (h * h)
        return c, d1, d2

    def locate(self, p):
        """Foot-point data ``(s, z, tangent)`` for points ``p`` of shape (N, n).

        The foot point is the nearest point of the smooth axis curve, found by
        Newton's method from the nearest sample, so ``z`` depends smoothly on ``p``.
        """
        A, T = self._axis, self._times
        p = np.atleast_2d(np.asarray(p, dtype=float))
        D = _wrap(p[:, None, :] - A[None, :, :], self.periods)
        i = np.argmin(np.einsum("ijk,ijk->ij", D, D), axis=1)
        # work relative to the nearest sample so the torus wrap is applied once
        base = p - D[np.arange(len(p)), i] - A[i]
        q = p - base
        s = T[i].copy()
        for _ in range(6):
            c, d1, d2 = self._curve(s)
            r = c - q
            g = np.einsum("ij,ij->i", r, d1)
            gp = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", r, d2)
            step = g / np.where(gp > 0, gp, np.einsum("ij,ij->i", d1, d1))
            s = np.clip(s - step, T[0], T[-1])
            if np.all(np.abs(step) < 1e-13 * (1 + np.abs(s))):
                break
        c, d1, _ = self._curve(s)
        z = q - c
        tan = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
        return s, z, tan

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        shape = p.shape
        s, z, tan = self.locate(p.reshape(-1, shape[-1]))
        r = np.linalg.norm(z, axis=1)
        lon = window(s, self.length, self.ramp)
        tra = plateau(r / self.ball)
        if self.mode == "push":
            u = np.asarray(self.vector, dtype=float)
            u_perp = u[None, :] - np.einsum("ij,j->i", tan, u)[:, None] * tan
            out = (lon * tra)[:, None] * u_perp
        else:
            out = -(self.eta**2) * (lon * tra)[:, None] * z
        return out.reshape(shape)

    def to_dict(self):
        return {
            "kind": "tube",
            "label": self.label,
            "mode": self.mode,
            "axis": [list(a) for a in self.axis],
            "times": list(self.times),
            "length": self.length,
            "ramp": self.ramp,
            "ball": self.ball,
            "vector": None if self.vector is None else list(self.vector),
            "eta": self.eta,
            "periods": None if self.periods is None else list(self.periods),
        }


def term_from_dict(d: dict):
    kind = d["kind"]
    periods = d.get("periods")
    periods = None if periods is None else tuple(map(float, periods))
    if kind == "polynomial":
        return PolynomialTerm(Polynomial.from_list(d["polynomial"]), label=d.get("label", "polynomial"))
    if kind == "blob":
        return BlobTerm(
            tuple(map(float, d["center"])),
            float(d["radius"]),
            tuple(map(float, d["vector"])),
            periods=periods,
            label=d.get("label", "blob"),
        )
    if kind == "tube":
        vec = d.get("vector")
        return TubeTerm(
            axis=tuple(tuple(map(float, a)) for a in d["axis"]),
            times=tuple(map(float, d["times"])),
            length=float(d["length"]),
            ramp=float(d["ramp"]),
            ball=float(d["ball"]),
            mode=d.get("mode", "push"),
            vector=None if vec is None else tuple(map(float, vec)),
            eta=float(d.get("eta", 0.0)),
            periods=periods,
            label=d.get("label", "tube"),
        )
    raise ValueError(f"unknown perturbation term kind {kind!r}")


@dataclass(frozen=True)
class VectorFieldSpec:
    """A base polynomial field (builtin or explicit) plus additive terms."""

    name: str
    base: Polynomial
    terms: tuple = ()
    params: tuple[float, ...] | None = None

    @classmethod
    def builtin(cls, name: str, params=None) -> "VectorFieldSpec":
        return cls(name, builtin_field(name, params), (), None if params is None else tuple(map(float, params)))

    @classmethod
    def polynomial(cls, poly: Polynomial) -> "VectorFieldSpec":
        return cls("polynomial", poly)

    def with_terms(self, *terms) -> "VectorFieldSpec":
        return replace(self, terms=self.terms + tuple(terms))

    @cached_property
    def _global_terms(self):
        return [t for t in self.terms if t.kind == "polynomial"]

    @cached_property
    def _local(self):
        local = [t for t in self.terms if t.kind != "polynomial"]
        if not local:
            return local, None
        pts, rad, owner = [], [], []
        for k, t in enumerate(local):
            P, R = t.cull_points
            pts.append(P)
            rad.append(R)
            owner.append(np.full(len(P), k))
        periods = next((t.periods for t in local if t.periods is not None), None)
        return local, (np.vstack(pts), np.concatenate(rad), np.concatenate(owner), periods)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        out = self.base(p)
        for t in self._global_terms:
            out = out + t(p)
        local, cull = self._local
        if not local:
            return out
        P, R, owner, periods = cull
        if p.ndim == 1:
            d = _wrap(p[None, :] - P, periods)
            near = np.einsum("ij,ij->i", d, d) < R * R
            if not near.any():
                return out
            for k in np.unique(owner[near]):
                out = out + local[k](p[None, :])[0]
            return out
        for t in local:
            out = out + t(p)
        return out

    @property
    def perturbation_size(self) -> float:
        """Sum of the C^0 sizes of the localized terms (triangle-inequality bound)."""
        return float(sum(getattr(t, "c0_size", 0.0) for t in self.terms if t.kind != "polynomial"))

    def to_dict(self) -> dict:
        out = {"name": self.name, "terms": [t.to_dict() for t in self.terms]}
        if self.name == "polynomial":
            out["polynomial"] = self.base.to_list()
        if self.params is not None:
            out["params"] = list(self.params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "VectorFieldSpec":
        name = d["name"]
        if name == "polynomial":
            spec = cls.polynomial(Polynomial.from_list(d["polynomial"]))
        else:
            spec = cls.builtin(name, d.get("params"))
        return spec.with_terms(*(term_from_dict(t) for t in d.get("terms", [])))
