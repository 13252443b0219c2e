"""Compactly supported scalar profiles shared by impulses and field perturbations."""
from __future__ import annotations

import numpy as np

# max |d/ds (1 - s^2)^2| on [0, 1], attained at s = 1/sqrt(3)
BUMP_SLOPE = 8.0 / (3.0 * np.sqrt(3.0))


def bump(s):
    """C^1 bump ``(1 - s^2)^2`` on ``[0, 1)``, zero outside; equals 1 at s=0."""
    s = np.asarray(s, dtype=float)
    return np.where(s < 1.0, (1.0 - np.minimum(s, 1.0) ** 2) ** 2, 0.0)


def smoothstep(t):
    """C^2 ramp from 0 (t <= 0) to 1 (t >= 1); odd about t = 1/2."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (6.0 * t - 15.0))


def plateau(s, inner: float = 1.0 / 3.0, outer: float = 0.5):
    """1 for ``s <= inner``, 0 for ``s >= outer``, C^2 ramp in between."""
    return 1.0 - smoothstep((np.asarray(s, dtype=float) - inner) / (outer - inner))


def window(s, length: float, ramp: float):
    """Longitudinal window on ``[0, length]``.

    Zero on ``[0, ramp]`` and ``[length - ramp, length]``, one on
    ``[2 ramp, length - 2 ramp]``.
    """
    s = np.asarray(s, dtype=float)
    up = smoothstep((s - ramp) / ramp)
    down = smoothstep((length - ramp - s) / ramp)
    return np.minimum(up, down)


def window_integral(length: float, ramp: float) -> float:
    """Exact integral of :func:`window` over ``[0, length]``."""
    # each smoothstep ramp integrates to half its width
    return length - 3.0 * ramp


# max_s s * plateau(s) over the ramp band, used for C^0 sizes of radial contractions
_S = np.linspace(0.0, 0.5, 200001)
PLATEAU_RADIAL_MAX = float(np.max(_S * plateau(_S)))
# max |plateau'|: the ramp's peak slope 15/8 over the band width 1/6
PLATEAU_SLOPE = 1.875 / (0.5 - 1.0 / 3.0)
