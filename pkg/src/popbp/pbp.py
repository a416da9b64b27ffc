"""Closed forms for the fully observed pure birth process.

With every individual detected, the transition law between observation
times is a shifted negative binomial and both the likelihood and the
Fisher information have explicit expressions.  The information for a
schedule ``t_1 < ... < t_n`` is

    FI = x0 * sum_i (t_i - t_{i-1})^2 / (exp(-lam*t_{i-1}) - exp(-lam*t_i))

and the interior optimum solves ``phi1(lam*gap_i) = phi2(lam*gap_{i+1})``
for the consecutive gaps.  The large-``n`` asymptotic solution of those
equations seeds a direct numerical optimization, which is what callers
should use: the seed alone can give up to a few percent less information
at large rates.  This module is also the ``p = 1`` fallback for the
partially observed machinery, whose series representation does not apply
there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.stats as st

from . import _optim
from .model import DesignResult

__all__ = [
    "DegenerateScheduleError",
    "PhiPair",
    "PHI",
    "phi1",
    "phi2",
    "pbp_transition_pmf",
    "pbp_fisher_info",
    "pbp_stationarity_residual",
    "pbp_optimal_times_approx",
    "pbp_optimal_times",
]


class DegenerateScheduleError(ValueError):
    """A zero gap makes the closed-form information expression 0/0."""


def _validate_lam(lam: float) -> None:
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"birth rate must be positive and finite, got {lam}")


def pbp_transition_pmf(x_from: int, x_to: int, lam: float, dt: float) -> float:
    """Probability of growing from ``x_from`` to ``x_to`` over ``dt``.

    The shifted negative binomial ``C(x_to-1, x_from-1) * u^x_from *
    (1-u)^(x_to-x_from)`` with ``u = exp(-lam*dt)``; zero for a shrinking
    population.
    """
    if x_from < 1:
        raise ValueError(f"source population must be at least 1, got {x_from}")
    _validate_lam(lam)
    if dt < 0:
        raise ValueError(f"time increment must be non-negative, got {dt}")
    if x_to < x_from:
        return 0.0
    if dt == 0.0:
        return 1.0 if x_to == x_from else 0.0
    upsilon = math.exp(-lam * dt)
    return float(st.nbinom.pmf(x_to - x_from, x_from, upsilon))


def _gaps(times: Sequence[float]) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError(f"times must be non-decreasing and non-negative, got {times}")
    return np.diff(t, prepend=0.0)


def _fi_terms(gaps: np.ndarray, t_prev: np.ndarray, lam: float) -> np.ndarray:
    # exp(-lam*t_{i-1}) - exp(-lam*t_i) written cancellation-free
    denom = np.exp(-lam * t_prev) * (-np.expm1(-lam * gaps))
    return gaps * gaps / denom


def pbp_fisher_info(x0: int, times: Sequence[float], lam: float) -> float:
    """Exact information of a fully observed schedule; linear in ``x0``."""
    if x0 < 1:
        raise ValueError(f"initial population must be at least 1, got {x0}")
    _validate_lam(lam)
    gaps = _gaps(times)
    if np.any(gaps == 0.0):
        raise DegenerateScheduleError(
            f"schedule {tuple(times)} has a zero gap; the closed form degenerates"
        )
    t_prev = np.asarray(times, dtype=float) - gaps
    return float(x0 * _fi_terms(gaps, t_prev, lam).sum())


def _pbp_fi_allow_ties(times: np.ndarray, lam: float) -> np.ndarray:
    """Information per schedule row (x0 = 1), zero-gap terms contributing
    their limit value 0; the optimizer's view of the closed form."""
    t = np.atleast_2d(np.asarray(times, dtype=float))
    gaps = np.diff(t, prepend=0.0, axis=1)
    t_prev = t - gaps
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(gaps > 0.0, _fi_terms(gaps, t_prev, lam), 0.0)
    return terms.sum(axis=1)


# ---------------------------------------------------------------------------
# Stationarity system
# ---------------------------------------------------------------------------


def phi1(x: float) -> float:
    """``x (2 e^x - x - 2) / (e^x - 1)^2``, extended by its limit 1 at 0."""
    if x < 0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x <= 1.0:
        em = math.expm1(x)
        return x * (2.0 * em - x) / (em * em)
    # large-x form scaled by exp(-2x); avoids overflow past x ~ 700
    en = math.exp(-x)
    em = math.expm1(-x)
    return x * (2.0 * en - (x + 2.0) * en * en) / (em * em)


def phi2(x: float) -> float:
    """``x e^x (2 e^x - x e^x - 2) / (e^x - 1)^2``, extended by 1 at 0."""
    if x < 0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x <= 1.0:
        em = math.expm1(x)
        return x * (2.0 * em - x * math.exp(x)) / (em * em)
    en = math.exp(-x)
    em = math.expm1(-x)
    return x * (2.0 - x - 2.0 * en) / (em * em)


@dataclass(frozen=True)
class PhiPair:
    """The two gap-coupling functions of the stationarity system."""

    phi1: Callable[[float], float]
    phi2: Callable[[float], float]


PHI = PhiPair(phi1=phi1, phi2=phi2)


def pbp_stationarity_residual(times: Sequence[float], lam: float) -> np.ndarray:
    """Residuals ``phi1(lam*gap_i) - phi2(lam*gap_{i+1})`` for i = 1..n-1;
    all vanish at the exact interior optimum."""
    _validate_lam(lam)
    gaps = _gaps(times)
    if len(gaps) < 2:
        raise ValueError("stationarity residuals need at least two observations")
    return np.array(
        [phi1(lam * gaps[i]) - phi2(lam * gaps[i + 1]) for i in range(len(gaps) - 1)]
    )


# ---------------------------------------------------------------------------
# Optimal schedules
# ---------------------------------------------------------------------------


def pbp_optimal_times_approx(n: int, lam: float, tau: float = 1.0) -> tuple[float, ...]:
    """Asymptotic solution ``t_i = (3/lam) log(1 + (i/n)(e^(lam tau/3)-1))``.

    Exact at ``i = n`` by construction; the ``lam -> 0`` limit is the
    equidistant schedule, which is returned for ``lam == 0``.
    """
    if n < 1:
        raise ValueError(f"need at least one observation, got n={n}")
    if lam < 0:
        raise ValueError(f"birth rate must be non-negative, got {lam}")
    if not (tau > 0):
        raise ValueError(f"time horizon must be positive, got {tau}")
    if lam == 0.0:
        return tuple(i * tau / n for i in range(1, n + 1))
    growth = math.expm1(lam * tau / 3.0)
    out = [3.0 / lam * math.log1p(i / n * growth) for i in range(1, n)]
    out.append(tau)
    return tuple(out)


def pbp_optimal_times(n: int, lam: float) -> DesignResult:
    """Directly maximize the closed-form information on the unit horizon.

    Seeded at the asymptotic schedule, refined with a simplex search and
    coordinate-wise golden sections; the result never falls below the
    seed's information.  ``x0 = 1``; the optimum does not depend on
    ``x0``.
    """
    if n < 1:
        raise ValueError(f"need at least one observation, got n={n}")
    _validate_lam(lam)
    if n == 1:
        return DesignResult(times=(1.0,), fi=float(_pbp_fi_allow_ties(np.array([[1.0]]), lam)[0]),
                            region="interior")

    def value(free: np.ndarray) -> float:
        return float(_pbp_fi_allow_ties(np.append(free, 1.0)[None, :], lam)[0])

    def feasible(free: np.ndarray) -> bool:
        return bool(free[0] > 0.0 and free[-1] < 1.0 and np.all(np.diff(free) > 0.0))

    seed = np.asarray(pbp_optimal_times_approx(n, lam)[: n - 1])
    centroid = np.arange(1, n) / n
    x, fx = _optim.nelder_mead_max(value, [seed, centroid], feasible)
    x, fx = _optim.coordinate_polish(value, x, 0.0, 1.0)
    return DesignResult(times=tuple(x) + (1.0,), fi=fx, region="interior")
