from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class TimeGrid:
    """Base time grid 0 = t_0 < ... < t_M = T with nominal step h."""

    T: float
    h: float
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InputError("a time grid needs at least two nodes")
        if t[0] != 0.0 or not np.all(np.diff(t) > 0):
            raise InputError("grid nodes must start at 0 and increase strictly")
        if not np.isclose(t[-1], self.T, rtol=0, atol=1e-12 * max(1.0, self.T)):
            raise InputError("last grid node must equal T")
        if not self.h > 0:
            raise InputError("h must be positive")
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, h: float) -> "TimeGrid":
        if not (T > 0 and h > 0):
            raise InputError("T and h must be positive")
        M = int(round(T / h))
        if M < 1 or not np.isclose(M * h, T, rtol=1e-9):
            raise InputError(f"T={T} is not an integer multiple of h={h}")
        return cls(T=float(T), h=float(T / M), times=np.linspace(0.0, T, M + 1))

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def cell_index(self, t) -> np.ndarray:
        """Cell j with t in (t_j, t_{j+1}]; t = 0 maps to cell 0."""
        j = np.searchsorted(self.times, t, side="left") - 1
        return np.clip(j, 0, self.M - 1)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.times.shape == other.times.shape and np.array_equal(self.times, other.times)
