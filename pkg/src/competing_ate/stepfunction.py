from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function ``t -> sum of increments at jump times <= t``.

    Carries cumulative hazards, cumulative incidences and (through
    :meth:`from_values`) survival curves.
    """

    jump_times: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float).ravel()
        incr = np.asarray(self.increments, dtype=float).ravel()
        if times.shape != incr.shape:
            raise ValueError("jump_times and increments must have the same length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "increments", incr)

    @classmethod
    def from_values(cls, jump_times, values, start=0.0) -> "StepFunction":
        values = np.asarray(values, dtype=float)
        return cls(jump_times, np.diff(np.concatenate([[start], values])))

    @classmethod
    def zero(cls) -> "StepFunction":
        return cls(np.empty(0), np.empty(0))

    @property
    def values(self) -> np.ndarray:
        return np.cumsum(self.increments)

    def __len__(self):
        return self.jump_times.size

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        """Right-continuous evaluation, ``sum_{s <= t}``."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self._lookup(idx)

    def left_value(self, t):
        """Left limit, ``sum_{s < t}``."""
        idx = np.searchsorted(self.jump_times, t, side="left")
        return self._lookup(idx)

    def _lookup(self, idx):
        cum = np.concatenate([[0.0], self.values])
        out = cum[idx]
        return float(out) if np.ndim(out) == 0 else out

    def scale(self, factor: float) -> "StepFunction":
        return StepFunction(self.jump_times, self.increments * factor)

    def is_nondecreasing(self) -> bool:
        return bool(np.all(self.increments >= 0))

    def __repr__(self):
        return f"StepFunction(n_jumps={len(self)}, total={self.values[-1] if len(self) else 0.0:.6g})"
