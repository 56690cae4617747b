"""Element-wise projection operator for bounded parameter adaptation.

The operator passes the raw adaptation signal through unchanged while a
parameter sits more than one boundary-layer width away from its active
bound (or is being pushed inward), and scales it linearly to zero across
the layer otherwise.  Integrating ``theta_dot = gamma * proj(theta, y)``
from an in-box initial condition therefore keeps theta in its box for any
bounded y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBounds

__all__ = ["ProjectionBounds", "proj"]

# tolerated float-noise excursion, as a fraction of the box width
_SLACK = 1e-9


@dataclass(frozen=True)
class ProjectionBounds:
    """Per-element box [lower, upper] with a boundary-layer width.

    margin defaults to 1% of the box width; it must stay positive and no
    wider than half the box so the two layers cannot overlap.
    """

    lower: np.ndarray
    upper: np.ndarray
    margin: np.ndarray = field(default=None)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape:
            raise ValueError("lower/upper shape mismatch")
        if not np.all(lo < up):
            raise ValueError("lower must be strictly below upper")
        if self.margin is None:
            mg = 0.01 * (up - lo)
        else:
            mg = np.broadcast_to(np.asarray(self.margin, dtype=float), lo.shape).copy()
        if not (np.all(mg > 0.0) and np.all(mg <= 0.5 * (up - lo) * (1 + 1e-12))):
            raise ValueError("margin must lie in (0, (upper-lower)/2]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "margin", mg)

    @classmethod
    def box(cls, lo, hi, shape=(), margin=None):
        """Uniform box with the given scalar bounds."""
        lower = np.full(shape, float(lo))
        upper = np.full(shape, float(hi))
        return cls(lower, upper, margin)

    def clip(self, theta):
        return np.clip(theta, self.lower, self.upper)

    def contains(self, theta, slack=0.0):
        return bool(
            np.all(theta >= self.lower - slack) and np.all(theta <= self.upper + slack)
        )


def proj(theta, y, bounds):
    """Projected adaptation signal, element-wise.

    theta must enter inside the box (up to float noise); a real violation
    means the caller integrated past the bound and is reported as
    OutOfBounds rather than silently corrected.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, up, mg = bounds.lower, bounds.upper, bounds.margin
    slack = _SLACK * (up - lo)
    if np.any(theta < lo - slack) or np.any(theta > up + slack):
        raise OutOfBounds("parameter outside its projection box")
    up_scale = np.clip((up - theta) / mg, 0.0, 1.0)
    lo_scale = np.clip((theta - lo) / mg, 0.0, 1.0)
    return np.where(y > 0.0, y * up_scale, y * lo_scale)
