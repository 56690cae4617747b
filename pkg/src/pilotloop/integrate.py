"""Fixed-step 4th-order integration for the coupled delay system.

The derivative callback closes over whatever history buffers it needs;
intra-step delayed lookups interpolate those buffers linearly.  The caller
appends one sample per completed step, so every stage lookup lands at or
before the newest stored sample as long as the step does not exceed the
smallest lag (checked via ``StepTooLarge``).
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteState, StepTooLarge

__all__ = ["rk4_step", "integrate_step", "integrate_fixed", "check_finite"]


def rk4_step(f, t, x, h):
    """One classical Runge-Kutta step; works for vector or matrix states."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_finite(x, t, signal="state"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(t, signal)


def integrate_step(f, state, t, h, min_lag=None):
    """Advance one step of the (possibly delayed) system ``f``.

    ``f(t, x)`` may perform history lookups at lags >= ``min_lag``; the step
    must not exceed that lag or stage evaluations would need future samples.
    """
    if h <= 0.0:
        raise ValueError("step must be positive")
    if min_lag is not None and h > min_lag * (1.0 + 1e-12):
        raise StepTooLarge(f"h={h} exceeds smallest delayed-lookup lag {min_lag}")
    x_new = rk4_step(f, t, np.asarray(state, dtype=float), h)
    check_finite(x_new, t + h)
    return x_new


def integrate_fixed(f, x0, t0, t1, h, after_step=None):
    """Integrate from t0 to t1 with fixed step h (sign-aware).

    ``after_step(t, x)`` runs once per completed step, mirroring the
    append-histories hook of the full simulation loop.
    """
    steps = int(round((t1 - t0) / h))
    x = np.asarray(x0, dtype=float)
    for i in range(steps):
        t = t0 + i * h
        x = rk4_step(f, t, x, h)
        check_finite(x, t + h)
        if after_step is not None:
            after_step(t0 + (i + 1) * h, x)
    return x
