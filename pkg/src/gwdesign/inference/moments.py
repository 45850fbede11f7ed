"""Streaming mean/variance accumulators (Welford updates, Chan merges)."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidStateError


class RunningMoments:
    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other):
        """New accumulator equivalent to having seen both sample streams."""
        out = RunningMoments(np.shape(self.mean))
        n = self.count + other.count
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.count = n
        out.mean = self.mean + delta * (other.count / n)
        out.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return out

    def variance(self, ddof=1):
        if self.count <= ddof:
            raise InvalidStateError(f"need more than {ddof} samples for a variance, have {self.count}")
        return self.m2 / (self.count - ddof)

    def std(self, ddof=1):
        return np.sqrt(np.maximum(self.variance(ddof), 0.0))
