"""Domain types shared by every other module.

A pure birth process with rate ``lam`` starts from a known population
``x0`` at time 0 and is observed at times ``t_1 <= ... <= t_n = tau``.
At each observation every individual is detected independently with
probability ``p``.  All optimization runs on the unit horizon
(``t_n = 1``); results transfer to any horizon ``tau`` through
:func:`rescale_design` with the rate pairing ``lam -> lam / tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ModelParams",
    "ObservationSchedule",
    "DesignResult",
    "decay_factors",
    "rescale_design",
]


@dataclass(frozen=True)
class ModelParams:
    """Birth rate, detection probability, initial population and horizon."""

    lam: float
    p: float
    x0: int = 1
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"birth rate must be positive and finite, got {self.lam}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"detection probability must lie in [0, 1], got {self.p}")
        if not (isinstance(self.x0, (int, np.integer)) and self.x0 >= 1):
            raise ValueError(f"initial population must be an integer >= 1, got {self.x0}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"time horizon must be positive and finite, got {self.tau}")

    @property
    def q(self) -> float:
        """Per-individual miss probability, exactly ``1 - p``."""
        return 1.0 - self.p


def decay_factors(times: Sequence[float], lam: float) -> np.ndarray:
    """No-birth probability weight ``exp(-lam * gap)`` per consecutive gap.

    The implicit start time is 0, so the first entry is
    ``exp(-lam * times[0])``.  Equal consecutive times yield a factor of
    exactly 1.
    """
    if not (lam > 0):
        raise ValueError(f"birth rate must be positive, got {lam}")
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError(f"times must be non-decreasing and non-negative, got {times}")
    gaps = np.diff(t, prepend=0.0)
    return np.exp(-lam * gaps)


def rescale_design(times: Sequence[float], tau: float) -> tuple[float, ...]:
    """Scale a unit-horizon design onto horizon ``tau``.

    A design that is optimal for rate ``lam`` on horizon 1 is, after
    scaling, optimal for rate ``lam / tau`` on horizon ``tau``; the
    Fisher information of the scaled problem is ``tau**2`` times that of
    the unit-horizon problem.
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"time horizon must be positive and finite, got {tau}")
    t = tuple(float(x) for x in times)
    if not t or abs(t[-1] - 1.0) > 1e-12:
        raise ValueError(f"expected a unit-horizon schedule with final time 1, got {times}")
    return tuple(tau * x for x in t)


@dataclass(frozen=True)
class ObservationSchedule:
    """Ordered observation times with their derived decay factors."""

    times: tuple[float, ...]
    n: int
    upsilon: tuple[float, ...]

    @classmethod
    def from_times(cls, times: Sequence[float], lam: float) -> "ObservationSchedule":
        ups = decay_factors(times, lam)
        return cls(times=tuple(float(t) for t in times), n=len(ups), upsilon=tuple(ups))

    def __post_init__(self) -> None:
        if self.n != len(self.times) or self.n != len(self.upsilon):
            raise ValueError("inconsistent schedule lengths")
        if self.n == 0:
            raise ValueError("schedule needs at least one observation time")
        if any(not (0.0 < u <= 1.0) for u in self.upsilon):
            raise ValueError(f"decay factors must lie in (0, 1], got {self.upsilon}")


@dataclass(frozen=True)
class DesignResult:
    """Optimal unit-horizon schedule, its Fisher information and the
    boundary stratum (tie pattern) on which the optimum was found."""

    times: tuple[float, ...]
    fi: float
    region: str

    def __post_init__(self) -> None:
        if self.fi < 0:
            raise ValueError(f"Fisher information cannot be negative, got {self.fi}")
        t = self.times
        if not t or abs(t[-1] - 1.0) > 1e-9:
            raise ValueError(f"unit-horizon design must end at 1, got {t}")
        if any(a > b + 1e-12 for a, b in zip(t, t[1:])):
            raise ValueError(f"design times must be non-decreasing, got {t}")
