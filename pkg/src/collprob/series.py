"""Per-timestep probability series shared by all estimators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ProbabilityTimeSeries:
    times: np.ndarray
    values: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise InvalidArgumentError("times and values must be 1-D arrays of equal length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def peak(self) -> tuple[float, float]:
        """Largest value and the first time it occurs."""
        k = int(np.argmax(self.values))
        return float(self.values[k]), float(self.times[k])


def as_values(series) -> np.ndarray:
    if isinstance(series, ProbabilityTimeSeries):
        return series.values
    return np.asarray(series, dtype=float)
