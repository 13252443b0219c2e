"""Built-in example systems.

S1a / S1b: the rotation ``(-y, x, 0)`` on the box ``[-3, 3]^3`` with
half-plane patches; S2: the minimal linear flow on the unit 3-torus;
S3: the north-south flow on the unit sphere with an equatorial arc and its
backward-time-one image.
"""
from __future__ import annotations

import numpy as np

from .fields import VectorFieldSpec
from .geometry import AmbientSpace, Impulse, SectionPatch
from .integrate import Tolerances
from .system import ImpulsiveSystem

__all__ = ["BUILTIN_SYSTEMS", "builtin_system", "singular_section_variant"]

BUILTIN_SYSTEMS = ("S1a", "S1b", "S2", "S3")

# latitude of phi_{-1}(equator) under z' = -(1 - z^2)
S3_LANDING_HEIGHT = float(np.tanh(1.0))


def _cylinder(name: str, landing_lower: float, offset: float) -> ImpulsiveSystem:
    space = AmbientSpace.box([-3.0] * 3, [3.0] * 3)
    D = SectionPatch.plane((0, 0, 0), [[1, 0, 0], [0, 0, 1]], (1.5, -0.5), (2.5, 0.5), name="D")
    Dh = SectionPatch.plane(
        (0, 0, 0), [[0, 1, 0], [0, 0, 1]], (landing_lower, -0.5), (landing_lower + 1.0, 0.5), name="D_hat"
    )
    imp = Impulse.affine(D, Dh, np.eye(2), (offset, 0.0))
    tol = Tolerances(integration=1e-10, event=1e-10)
    return ImpulsiveSystem(name, space, VectorFieldSpec.builtin("cylinder-rotation"), D, Dh, imp, tol)


def builtin_system(name: str) -> ImpulsiveSystem:
    if name == "S1a":
        return _cylinder("S1a", 1.5, 0.0)
    if name == "S1b":
        return _cylinder("S1b", 0.5, -1.0)
    if name == "S2":
        periods = (1.0, 1.0, 1.0)
        space = AmbientSpace.torus(periods)
        basis = [[0, 1, 0], [0, 0, 1]]
        D = SectionPatch.plane((0, 0, 0), basis, (0.1, 0.1), (0.4, 0.4), periods=periods, name="D")
        Dh = SectionPatch.plane((0.5, 0, 0), basis, (0.1, 0.1), (0.4, 0.4), periods=periods, name="D_hat")
        imp = Impulse.affine(D, Dh)
        return ImpulsiveSystem("S2", space, VectorFieldSpec.builtin("torus-constant"), D, Dh, imp, Tolerances())
    if name == "S3":
        space = AmbientSpace.sphere(1.0)
        D = SectionPatch.latitude(0.0, -2.5, 2.5, name="D")
        Dh = SectionPatch.latitude(S3_LANDING_HEIGHT, -2.5, 2.5, name="D_hat")
        imp = Impulse.affine(D, Dh)
        tol = Tolerances(max_step=0.1)
        return ImpulsiveSystem("S3", space, VectorFieldSpec.builtin("north-south-sphere"), D, Dh, imp, tol)
    raise ValueError(f"unknown builtin system {name!r}; choose from {', '.join(BUILTIN_SYSTEMS)}")


def singular_section_variant() -> ImpulsiveSystem:
    """S1a with ``D`` moved onto the rotation axis, so ``D`` meets the zero set of the field."""
    base = builtin_system("S1a")
    D = SectionPatch.plane((0, 0, 0), [[1, 0, 0], [0, 0, 1]], (-0.5, -0.5), (0.5, 0.5), name="D")
    imp = Impulse.affine(D, base.D_hat, np.eye(2), (2.0, 0.0))
    return ImpulsiveSystem("S1a-singular", base.space, base.field, D, base.D_hat, imp, base.tolerances)
