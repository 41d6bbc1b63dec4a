"""Ring-buffer history for delayed signal lookups on a fixed integration grid.

Signals are sampled once per accepted integrator step.  Queries are only
legal on the grid or exactly halfway between two grid points (the stage
times of the classical Runge-Kutta step).  A half-grid query interpolates
the four surrounding samples with the cubic midpoint rule
(-f[k-1] + 9 f[k] + 9 f[k+1] - f[k+2]) / 16, which keeps the delayed terms
from dropping the integrator below third order; when the stencil would
leave the recorded history it falls back to the two-sample average.  Times
before the start of the run return zeros, matching filter states that are
defined as zero before t0.
"""
from __future__ import annotations

import numpy as np


class DelayLineError(ValueError):
    """Raised for off-grid queries or queries outside the retained span."""


class DelayLine:
    """Fixed-width vector signal history spanning at least ``span`` seconds."""

    def __init__(self, width, h, span, t0=0.0):
        if h <= 0.0:
            raise DelayLineError("sample period h must be positive")
        if span < 0.0:
            raise DelayLineError("span must be nonnegative")
        self.width = int(width)
        self.h = float(h)
        self.t0 = float(t0)
        # +2 so the newest sample never evicts the oldest one still needed
        self.capacity = int(round(span / h)) + 2
        self._buf = np.zeros((self.capacity, self.width))
        self.count = 0  # total samples appended; sample k is at t0 + k h

    def append(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.width,):
            raise DelayLineError(f"expected shape ({self.width},), got {values.shape}")
        self._buf[self.count % self.capacity] = values
        self.count += 1

    def _sample(self, k):
        if k < 0:
            return np.zeros(self.width)
        if k >= self.count:
            raise DelayLineError(f"sample {k} not yet recorded (have {self.count})")
        if k < self.count - self.capacity:
            raise DelayLineError(f"sample {k} evicted (span too short)")
        return self._buf[k % self.capacity]

    def query(self, t):
        """Value at time t: stored sample on the grid, cubic midpoint
        interpolation on the half grid, zeros for t < t0."""
        pos = 2.0 * (t - self.t0) / self.h
        k2 = int(round(pos))
        if abs(pos - k2) > 1e-6:
            raise DelayLineError(f"query time {t} is not on the grid or half-grid")
        if k2 < 0:
            return np.zeros(self.width)
        if k2 % 2 == 0:
            return self._sample(k2 // 2).copy()
        k = (k2 - 1) // 2
        if k >= 1 and k + 2 <= self.count - 1 and k - 1 >= self.count - self.capacity:
            return (-self._sample(k - 1) + 9.0 * self._sample(k)
                    + 9.0 * self._sample(k + 1) - self._sample(k + 2)) / 16.0
        return 0.5 * (self._sample(k) + self._sample(k + 1))

    def window(self, t_lo, t_hi):
        """Grid samples covering [t_lo, t_hi] as (times, values) arrays."""
        k_lo = int(round((t_lo - self.t0) / self.h))
        k_hi = int(round((t_hi - self.t0) / self.h))
        times = self.t0 + self.h * np.arange(k_lo, k_hi + 1)
        values = np.stack([self._sample(k) for k in range(k_lo, k_hi + 1)])
        return times, values
