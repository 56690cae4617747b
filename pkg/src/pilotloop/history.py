"""Uniformly sampled signal history with interpolated delayed lookup."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

__all__ = ["HistoryBuffer"]


class HistoryBuffer:
    """Ring buffer of past samples of a vector signal.

    One sample is appended per integration step (spacing ``sample_period``).
    ``lookup(lag)`` linearly interpolates between stored samples; a lag that
    is an exact multiple of the sample period returns the stored sample
    bit-exactly.  Lookups that reach back before the first appended sample
    return ``initial_value`` (zeros by default), which models a quiescent
    pre-history.
    """

    def __init__(self, dim, sample_period, horizon, initial_value=None, t0=0.0):
        if sample_period <= 0.0:
            raise ValueError("sample_period must be positive")
        if horizon < 0.0:
            raise ValueError("horizon must be nonnegative")
        self.dim = int(dim)
        self.sample_period = float(sample_period)
        self.horizon = float(horizon)
        self.t0 = float(t0)
        if initial_value is None:
            self.initial_value = np.zeros(self.dim)
        else:
            self.initial_value = np.asarray(initial_value, dtype=float).ravel()
            if self.initial_value.size != self.dim:
                raise DimensionMismatch("initial_value size mismatch")
        self.capacity = int(round(self.horizon / self.sample_period)) + 2
        self._data = np.tile(self.initial_value, (self.capacity, 1))
        self._head = 0
        self._count = 0

    @property
    def current_time(self):
        """Time of the newest stored sample."""
        return self.t0 + (self._count - 1) * self.sample_period

    def append(self, value):
        v = np.asarray(value, dtype=float).ravel()
        if v.size != self.dim:
            raise DimensionMismatch("appended sample has wrong dimension")
        if self._count > 0:
            self._head = (self._head + 1) % self.capacity
        self._data[self._head] = v
        self._count += 1

    def back(self, k):
        """Sample k steps before the newest one (initial value when older
        than everything appended so far)."""
        if k < 0:
            raise ValueError("negative sample offset")
        if k >= self._count:
            return self.initial_value.copy()
        return self._data[(self._head - k) % self.capacity].copy()

    def take(self, offsets):
        """Vectorized ``back`` for an integer offset array; returns
        (len(offsets), dim)."""
        offs = np.asarray(offsets)
        idx = (self._head - offs) % self.capacity
        vals = self._data[idx]
        older = offs >= self._count
        if np.any(older):
            vals = np.where(older[:, None], self.initial_value[None, :], vals)
        return vals

    def lookup(self, lag):
        """Value at ``current_time - lag`` with linear interpolation."""
        if lag < 0.0:
            raise ValueError("lag must be nonnegative")
        if lag > self.horizon + 0.5 * self.sample_period:
            raise ValueError(f"lag {lag} exceeds horizon {self.horizon}")
        steps = lag / self.sample_period
        nearest = round(steps)
        if abs(steps - nearest) <= 1e-9 * max(1.0, abs(steps)):
            return self.back(int(nearest))
        k0 = int(np.floor(steps))
        frac = steps - k0
        return (1.0 - frac) * self.back(k0) + frac * self.back(k0 + 1)
