"""The impulsive system tuple and validation of its standing hypotheses."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InvalidSystem
from .fields import VectorFieldSpec
from .geometry import AmbientSpace, Check, Impulse, SectionPatch, ValidationReport, hausdorff_distance, set_distance
from .integrate import Tolerances

__all__ = ["ImpulsiveSystem", "validate_system"]


@dataclass(frozen=True)
class ImpulsiveSystem:
    name: str
    space: AmbientSpace
    field: VectorFieldSpec
    D: SectionPatch
    D_hat: SectionPatch
    impulse: Impulse
    tolerances: Tolerances = field(default_factory=Tolerances)
    singularity_radius: float = 0.05
    records: tuple = ()

    def with_field(self, new_field: VectorFieldSpec, record=None) -> "ImpulsiveSystem":
        recs = self.records if record is None else self.records + (record,)
        return replace(self, field=new_field, records=recs)

    def with_impulse(self, new_impulse: Impulse, record=None) -> "ImpulsiveSystem":
        recs = self.records if record is None else self.records + (record,)
        return replace(self, impulse=new_impulse, records=recs)

    @property
    def horizon(self) -> float:
        return self.tolerances.horizon

    @cached_property
    def _section_grids(self):
        n = 41 if self.D.chart_dim == 2 else 401
        return self.D.grid(n), self.D_hat.grid(n)

    @cached_property
    def section_distance(self) -> float:
        """Sampled ``dist(D, D_hat)`` (infimum over point pairs)."""
        A, B = self._section_grids
        return set_distance(A, B, self.space)

    @cached_property
    def speed_bound(self) -> float:
        """Conservative estimate of ``sup |X|``.

        Sampled maximum over the space (and box corners) of the base field,
        plus the C^0 size of all localized terms, plus a 5% safety factor.
        """
        base = VectorFieldSpec(self.field.name, self.field.base, tuple(t for t in self.field.terms if t.kind == "polynomial"))
        pts = self.space.sample(4096, seed=12345)
        extra = list(self._section_grids)
        if self.space.kind == "euclidean-box":
            lo, hi = np.asarray(self.space.lower), np.asarray(self.space.upper)
            corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(len(lo), -1).T
            extra.append(corners)
        pts = np.vstack([pts] + extra)
        vmax = float(np.max(np.linalg.norm(base(pts), axis=-1)))
        return 1.05 * vmax + self.field.perturbation_size

    @property
    def min_travel_time(self) -> float:
        """Lower bound ``dist(D, D_hat) / sup|X|`` for flights between the sections."""
        return self.section_distance / self.speed_bound

    @property
    def burn_in(self) -> float:
        return 0.5 * self.min_travel_time

    @property
    def integ_kwargs(self) -> dict:
        tol = self.tolerances
        return dict(tol=tol.integration, event_tol=tol.event, max_step=tol.max_step)

    @cached_property
    def validation(self) -> ValidationReport:
        return validate_system(self)

    def require_valid(self) -> "ImpulsiveSystem":
        rep = self.validation
        if not rep.passed:
            failed = ", ".join(c.name for c in rep.checks if not c.passed)
            raise InvalidSystem(f"system {self.name!r} fails: {failed}")
        return self


def _lipschitz_estimate(X, pts, h=1e-4, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=pts.shape)
    d *= h / np.linalg.norm(d, axis=1, keepdims=True)
    return float(np.max(np.linalg.norm(X(pts + d) - X(pts), axis=1)) / h)


def validate_system(system: ImpulsiveSystem, n_samples: int = 41, seed: int = 0) -> ValidationReport:
    """Run the standing-hypothesis checks; failures are reported, never raised."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    X, D, Dh, I, space = system.field, system.D, system.D_hat, system.impulse, system.space
    n = max(2, n_samples) if D.chart_dim == 2 else max(2, n_samples**2)
    checks = []

    # (a) no singular point of X near the closure of D
    uD = D.chart_grid(n)
    pD = D.from_chart(uD)
    speeds = np.linalg.norm(X(pD), axis=-1)
    spacing = float(np.max(D._hi - D._lo)) / (n - 1)
    lip = _lipschitz_estimate(X, pD, seed=seed)
    need = lip * (system.singularity_radius + spacing)
    vmin = float(speeds.min())
    checks.append(
        Check(
            "singularity-free",
            vmin > need,
            vmin,
            f"min |X| on D = {vmin:.6g}; needs > L*(r_sing + h) = {need:.3g}",
        )
    )

    # (b) transversality on D and D_hat
    for label, sec in (("D", D), ("D_hat", Dh)):
        P = sec.grid(n)
        tv = np.abs(np.einsum("ij,ij->i", sec.grad_g(P), X(P)))
        checks.append(
            Check(
                f"transversal-{label}",
                bool(tv.min() >= sec.transversality_floor),
                float(tv.min()),
                f"min |X.grad g| on {label}",
            )
        )

    # (c) separation of D and I(D) in the Hausdorff sense
    ID = np.array([I.apply(p) for p in pD])
    dh = hausdorff_distance(pD, ID, space)
    dmin = set_distance(pD, ID, space)
    checks.append(Check("hausdorff-separation", dh > 0.0, dh, f"set distance {dmin:.6g}"))

    # (d) injectivity of the impulse
    rng = np.random.default_rng(seed)
    i, j = rng.integers(0, len(uD), size=(2, 1000))
    keep = i != j
    a, b = uD[i[keep]], uD[j[keep]]
    Ia = np.array([I.chart_apply(u) for u in a])
    Ib = np.array([I.chart_apply(u) for u in b])
    ratio = float(np.min(np.linalg.norm(Ia - Ib, axis=1) / np.linalg.norm(a - b, axis=1)))
    L = I.displacement_lipschitz
    checks.append(
        Check(
            "impulse-injective",
            L < 1.0 and ratio > 0.0 and ratio >= I.co_lipschitz * (1 - 1e-9),
            L,
            f"bump Lipschitz {L:.4g}; min sampled separation ratio {ratio:.4g}",
        )
    )

    # (e) landing set disjoint from D and inside D_hat's rectangle
    uI = Dh.to_chart(ID)
    inside = bool(np.all(Dh.in_rect(uI, 1e-9)))
    checks.append(
        Check(
            "landing-separation",
            dmin > max(D.tol, Dh.tol) and inside,
            dmin,
            "I(D) inside D_hat" if inside else "I(D) leaves D_hat's rectangle",
        )
    )

    if space.kind == "implicit-surface":
        P = space.sample(2000)
        tang = float(np.max(np.abs(np.einsum("ij,ij->i", X(P), space.surface_normal(P)))))
        checks.append(Check("surface-tangency", tang <= 1e-8, tang, "max |X.n| on the surface"))
    return ValidationReport(tuple(checks))
